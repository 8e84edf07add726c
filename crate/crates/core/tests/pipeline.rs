use adjoint_gp::features::{forcing_from_weights, sample_basis, standard_normals, FeatureBasis, KernelParams};
use adjoint_gp::inference::{
    adjoint_bank, assemble_phi, ml_estimate, observe, posterior_forcing, posterior_q, predictive_mse, run_pipeline, synthesize,
    ObservationSet, Prior,
};
use adjoint_gp::ode::{OdeParams, OdeSystem};
use adjoint_gp::pde::{PdeParams, PdeSystem};
use adjoint_gp::shift::{ShiftParams, ShiftSystem};
use adjoint_gp::{window_indicator, Field, Field32, Grid, LinearSystem, OdeSystem32, OdeSystem64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ode() -> OdeSystem64 {
    OdeSystem::new(OdeParams::new(5.0, 1.0, 0.5, 1.0).unwrap(), 800).unwrap()
}

fn intervals(grid: &Grid<f64>, n: usize, t_end: f64) -> Vec<Field<f64>> {
    (0..n)
        .map(|i| window_indicator(grid, &[t_end * i as f64 / n as f64], &[t_end * (i + 1) as f64 / n as f64]).unwrap())
        .collect()
}

/// Identifiable basis on a long horizon: Fourier-lattice frequencies with
/// seeded phases.
fn lattice_basis(m: usize, horizon: f64, seed: u64) -> FeatureBasis<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs = (0..m).map(|k| std::f64::consts::TAU * k as f64 / horizon).collect();
    let phases = (0..m).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    FeatureBasis::from_parts(1, freqs, phases, KernelParams::new(1.0, 4.0).unwrap(), seed).unwrap()
}

#[test]
fn phi_q_reproduces_direct_readings_ode() {
    let sys = ode();
    let g = sys.grid().clone();
    let basis = sample_basis(25, 1, KernelParams::new(0.6f64.sqrt(), 4.0).unwrap(), 9).unwrap();
    let q = standard_normals(25, 10);
    let f = forcing_from_weights(&basis, &q, &g).unwrap();
    let windows = intervals(&g, 30, 1.0);
    let direct = observe(&windows, &sys.forward(&f).unwrap()).unwrap();
    let phi = assemble_phi(&adjoint_bank(&sys, &windows).unwrap(), &basis, &g, "ode").unwrap();
    let via = phi.apply(&q).unwrap();
    for (d, a) in direct.iter().zip(&via) {
        assert!((d - a).abs() <= 1e-10 * (1.0 + d.abs()), "{d} vs {a}");
    }
}

#[test]
fn phi_q_reproduces_direct_readings_pde() {
    let p = PdeParams::new([0.3, -0.2], 0.05, [0.0, 0.0], [4.0, 4.0], 2.0).unwrap();
    let sys = PdeSystem::new(p, 20, 12, 12).unwrap();
    let g = sys.grid().clone();
    let basis = sample_basis(15, 3, KernelParams::new(1.5, 1.0).unwrap(), 3).unwrap();
    let q = standard_normals(15, 4);
    let f = forcing_from_weights(&basis, &q, &g).unwrap();
    let windows: Vec<Field<f64>> = (0..6)
        .map(|i| {
            let s = 0.5 * i as f64;
            window_indicator(&g, &[0.5, s, s], &[1.5, s + 1.0, s + 1.0]).unwrap()
        })
        .collect();
    let direct = observe(&windows, &sys.forward(&f).unwrap()).unwrap();
    let phi = assemble_phi(&adjoint_bank(&sys, &windows).unwrap(), &basis, &g, "pde").unwrap();
    for (d, a) in direct.iter().zip(&phi.apply(&q).unwrap()) {
        assert!((d - a).abs() <= 1e-9 * (1.0 + d.abs()), "{d} vs {a}");
    }
}

#[test]
fn noiseless_synthesis_equals_windowed_solution() {
    let sys = ode();
    let g = sys.grid().clone();
    let f = Field::from_fn(&g, |t: &[f64]| (5.0 * t[0]).sin()).unwrap();
    let windows = intervals(&g, 12, 1.0);
    let (data, u) = synthesize(&sys, windows.clone(), &f, 0.0, 1).unwrap();
    assert_eq!(data.readings(), observe(&windows, &u).unwrap().as_slice());
}

#[test]
fn noiseless_ml_recovers_weights() {
    let horizon = 20.0;
    let sys = OdeSystem::new(OdeParams::new(5.0, 1.0, 0.5, horizon).unwrap(), 20_000).unwrap();
    let g = sys.grid().clone();
    let basis = lattice_basis(20, horizon, 5);
    let phi = assemble_phi(&adjoint_bank(&sys, &intervals(&g, 40, horizon)).unwrap(), &basis, &g, "ode").unwrap();
    let q = standard_normals(20, 6);
    let z = phi.apply(&q).unwrap();
    let ml = ml_estimate(&phi, &z, 1e-6).unwrap();
    for (a, b) in ml.q.iter().zip(&q) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn concentrated_posterior_scores_the_noise_floor() {
    // A posterior sitting on the true weights leaves only held-out noise:
    // the predictive MSE should match σ²_heldout.
    let horizon = 20.0;
    let sys = OdeSystem::new(OdeParams::new(5.0, 1.0, 0.5, horizon).unwrap(), 20_000).unwrap();
    let g = sys.grid().clone();
    let basis = lattice_basis(20, horizon, 8);
    let q = standard_normals(20, 9);
    let f = forcing_from_weights(&basis, &q, &g).unwrap();
    let (train, _) = synthesize(&sys, intervals(&g, 60, horizon), &f, 0.0, 1).unwrap();
    let out = run_pipeline(&sys, &train, &basis, &Prior::standard(20)).unwrap();
    let heldout_windows = intervals(&g, 400, horizon);
    let (heldout, _) = synthesize(&sys, heldout_windows, &f, 0.1, 2).unwrap();
    let mse = predictive_mse(&out.posterior, &basis, &sys, &heldout, 20, 3).unwrap();
    assert!((mse / 0.01 - 1.0).abs() <= 0.2, "mse {mse}");
}

#[test]
fn default_prior_forcing_has_kernel_variance() {
    // Marginal variance of f(t) under the RFF prior, by Monte Carlo over
    // weights, against τ² (the exact EQ kernel on the diagonal).
    let g = Grid::interval(1.0, 50).unwrap();
    let basis = sample_basis(400, 1, KernelParams::new(0.6f64.sqrt(), 4.0).unwrap(), 12).unwrap();
    let draws = 600;
    let mut sum_sq = vec![0.0; g.len()];
    for s in 0..draws {
        let f = forcing_from_weights(&basis, &standard_normals(400, 1000 + s), &g).unwrap();
        for (acc, v) in sum_sq.iter_mut().zip(f.values()) {
            *acc += v * v;
        }
    }
    let mean_var = sum_sq.iter().sum::<f64>() / (draws as f64 * g.len() as f64);
    assert!((mean_var / 4.0 - 1.0).abs() <= 0.15, "{mean_var}");
}

#[test]
fn f32_pipeline_tracks_f64() {
    let sys64 = ode();
    let sys32: OdeSystem32 = OdeSystem::new(OdeParams::new(5.0f32, 1.0, 0.5, 1.0).unwrap(), 800).unwrap();
    let f64_basis = sample_basis(10, 1, KernelParams::new(0.6f64.sqrt(), 4.0).unwrap(), 1).unwrap();
    let f32_basis = sample_basis(10, 1, KernelParams::new(0.6f32.sqrt(), 4.0).unwrap(), 1).unwrap();
    let truth = Field::from_fn(sys64.grid(), |t: &[f64]| 2.0 * (3.0 * t[0]).cos()).unwrap();
    let (d64, _) = synthesize(&sys64, intervals(sys64.grid(), 20, 1.0), &truth, 0.05, 4).unwrap();
    let w32: Vec<Field32> = (0..20)
        .map(|i| window_indicator(sys32.grid(), &[i as f32 / 20.0], &[(i + 1) as f32 / 20.0]).unwrap())
        .collect();
    let z32: Vec<f32> = d64.readings().iter().map(|&z| z as f32).collect();
    let d32 = ObservationSet::new(w32, z32, 0.05f32).unwrap();
    let a = run_pipeline(&sys64, &d64, &f64_basis, &Prior::standard(10)).unwrap();
    let b = run_pipeline(&sys32, &d32, &f32_basis, &Prior::standard(10)).unwrap();
    for (x, y) in a.posterior.mean().iter().zip(b.posterior.mean().iter()) {
        assert!((x - *y as f64).abs() <= 1e-2 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn misassigned_shift_translates_the_forcing() {
    // With f observed only through u(t) = f(t − a), assuming shift a + δ
    // moves the inferred forcing by δ and fits the data equally well.
    let g = Grid::interval(10.0, 200).unwrap();
    let basis = sample_basis(100, 1, KernelParams::new(1.0, 1.0).unwrap(), 2).unwrap();
    let truth = Field::from_fn(&g, |t: &[f64]| (t[0] - 3.0).sin()).unwrap();
    let windows: Vec<Field<f64>> = (0..20)
        .map(|i| {
            let c = 2.1 + 5.8 * i as f64 / 19.0;
            window_indicator(&g, &[c - 0.025], &[c + 0.025]).unwrap()
        })
        .collect();
    let true_sys = ShiftSystem::new(ShiftParams::new(2.0, g.clone()).unwrap());
    let (data, _) = synthesize(&true_sys, windows, &truth, 0.0, 1).unwrap();
    let fit = |a: f64| {
        let sys = ShiftSystem::new(ShiftParams::new(a, g.clone()).unwrap());
        let out = run_pipeline(&sys, &data, &basis, &Prior::standard(100)).unwrap();
        posterior_forcing(&out.posterior, &basis, &g).unwrap().0
    };
    let (at_true, at_wrong) = (fit(2.0), fit(1.5));
    // cell k under shift 1.5 sits where cell k − 10 did under shift 2
    for k in 10..120 {
        let (a, b) = (at_true.values()[k - 10], at_wrong.values()[k]);
        assert!((a - b).abs() < 0.05, "cell {k}: {a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn posterior_never_exceeds_prior_spread(n in 1usize..30, m in 1usize..12, seed in 0u64..10_000, sigma in 0.01f64..2.0) {
        let sys = OdeSystem::new(OdeParams::new(5.0, 1.0, 0.5, 1.0).unwrap(), 200).unwrap();
        let g = sys.grid().clone();
        let basis = sample_basis(m, 1, KernelParams::new(0.3, 2.0).unwrap(), seed).unwrap();
        let phi = assemble_phi(&adjoint_bank(&sys, &intervals(&g, n, 1.0)).unwrap(), &basis, &g, "ode").unwrap();
        let z = standard_normals(n, seed + 1);
        let post = posterior_q(&phi, &z, sigma, &Prior::standard(m)).unwrap();
        let cov = post.covariance();
        for i in 0..m {
            prop_assert!(cov[(i, i)] <= 1.0 + 1e-9);
            for j in 0..m {
                prop_assert!((cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12);
            }
        }
        prop_assert!(cov.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
    }
}
