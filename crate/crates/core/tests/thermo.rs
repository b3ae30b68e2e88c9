mod common;

use approx::assert_relative_eq;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use reconfig_core::thermo::{
    entropy, entropy_production_step, esl_slack, evolve_gaussian, evolve_gaussian_exact, expected_loss,
    free_energy, gibbs_state, ledger_rows, ot_geodesic, path_ledger, relax, w2_gaussian, MomentScheme,
};
use reconfig_core::{GaussianState, Matrix, QuadraticTask, StepRule, Vector};

fn random_state(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> GaussianState {
    GaussianState::new(gaussian_vector(r, d), random_spd(r, d, 0.2, 2.0)).unwrap()
}

fn random_task(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> QuadraticTask {
    QuadraticTask::new("t", random_spd(r, d, 0.3, 3.0), gaussian_vector(r, d)).unwrap()
}

/// Samples `n` points of `g` and applies `f` to each, returning mean and
/// standard error of the result.
fn monte_carlo(g: &GaussianState, n: usize, seed: u64, f: impl Fn(&Vector) -> f64) -> (f64, f64) {
    let mut r = rng(seed);
    let l = g.cholesky_factor();
    let d = g.dim();
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..n {
        let z = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
        let v = f(&(g.mean() + &l * z));
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum2 / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn entropy_closed_forms() {
    let one = GaussianState::isotropic(Vector::zeros(1), 1.0).unwrap();
    assert_relative_eq!(entropy(&one), 1.418_938_533_204_672_7, epsilon = 1e-12);
    let two = GaussianState::isotropic(Vector::zeros(2), 1.0).unwrap();
    assert_relative_eq!(entropy(&two), 2.837_877_066_409_345_5, epsilon = 1e-12);
}

#[test]
fn entropy_and_expected_loss_match_monte_carlo() {
    let mut r = rng(11);
    let d = 3;
    let g = random_state(&mut r, d);
    let task = random_task(&mut r, d);
    let n = 1_000_000;
    let precision = g.precision();
    let log_norm = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * g.log_det();
    let (h, se) = monte_carlo(&g, n, 1, |x| {
        let c = x - g.mean();
        0.5 * c.dot(&(&precision * &c)) + log_norm
    });
    assert!((h - entropy(&g)).abs() <= 3.0 * se, "entropy {h} vs {}", entropy(&g));
    let (phi, se) = monte_carlo(&g, n, 2, |x| task.value(x).unwrap());
    let exact = expected_loss(&g, &task).unwrap();
    assert!((phi - exact).abs() <= 3.0 * se, "E[Phi] {phi} vs {exact}");
}

#[test]
fn free_energy_of_flat_task_is_pure_entropy() {
    let mut r = rng(12);
    let g = random_state(&mut r, 4);
    let flat = QuadraticTask::new("flat", Matrix::zeros(4, 4), gaussian_vector(&mut r, 4)).unwrap();
    assert_relative_eq!(free_energy(&g, &flat, 0.7).unwrap(), -0.7 * entropy(&g), max_relative = 1e-14);
}

#[test]
fn gibbs_free_energy_matches_quadrature_in_one_dimension() {
    for (h, t, center) in [(1.0, 1.0, 0.0), (3.0, 0.5, 1.5), (0.2, 2.0, -2.0)] {
        let task = QuadraticTask::new("t", Matrix::from_element(1, 1, h), Vector::from_element(1, center)).unwrap();
        let g = gibbs_state(&task, t, 100.0).unwrap();
        // F at equilibrium is -T log Z with Z the integral of exp(-Phi/T).
        let width = 12.0 * (t / h).sqrt();
        let steps = 20_000;
        let dx = 2.0 * width / steps as f64;
        let z: f64 = (0..=steps)
            .map(|i| {
                let x = center - width + i as f64 * dx;
                let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * (-task.value(&Vector::from_element(1, x)).unwrap() / t).exp()
            })
            .sum::<f64>()
            * dx
            / 3.0;
        assert_relative_eq!(free_energy(&g, &task, t).unwrap(), -t * z.ln(), epsilon = 1e-10);
    }
}

/// Solves `S = A S A^T + Q` through `(I - A (x) A) vec S = vec Q`.
fn discrete_lyapunov(a: &Matrix, q: &Matrix) -> Matrix {
    let d = a.nrows();
    let kron = a.kronecker(a);
    let system = Matrix::identity(d * d, d * d) - kron;
    let rhs = Vector::from_column_slice(q.as_slice());
    let sol = system.lu().solve(&rhs).unwrap();
    Matrix::from_column_slice(d, d, sol.as_slice())
}

#[test]
fn lyapunov_fixed_point_is_stationary() {
    let mut r = rng(13);
    for d in [1, 3, 5] {
        let task = random_task(&mut r, d);
        let rule = StepRule::langevin(0.5 / task.lambda_max(), 0.8);
        let a = rule.step_jacobian(&task);
        let q = Matrix::identity(d, d) * (2.0 * 0.8 * rule.step_size);
        let sigma = discrete_lyapunov(&a, &q);
        let g = GaussianState::new(task.minimizer().clone(), sigma.clone()).unwrap();
        let next = evolve_gaussian(&g, &task, &rule).unwrap();
        assert!((next.covariance() - &sigma).norm() <= 1e-10 * sigma.norm());
        assert!((next.mean() - task.minimizer()).norm() <= 1e-10);
    }
}

#[test]
fn pure_diffusion_and_flat_production() {
    let mut r = rng(14);
    let g = random_state(&mut r, 3);
    let flat = QuadraticTask::new("flat", Matrix::zeros(3, 3), Vector::zeros(3)).unwrap();
    let (eta, t) = (0.01, 0.6);
    let rule = StepRule::langevin(eta, t);
    let next = evolve_gaussian(&g, &flat, &rule).unwrap();
    let expect = g.covariance() + Matrix::identity(3, 3) * (2.0 * t * eta);
    assert!((next.covariance() - expect).norm() <= 1e-14);
    let sigma = entropy_production_step(&g, &flat, &rule).unwrap();
    assert_relative_eq!(sigma, t * eta * g.precision().trace(), max_relative = 1e-12);
}

#[test]
fn equilibrium_produces_no_entropy() {
    let mut r = rng(15);
    let task = random_task(&mut r, 4);
    let g = gibbs_state(&task, 0.9, 100.0).unwrap();
    let sigma = entropy_production_step(&g, &task, &StepRule::langevin(0.01, 0.9)).unwrap();
    assert!(sigma.abs() <= 1e-12);
    assert!(entropy_production_step(&g, &task, &StepRule::gradient_descent(0.01)).is_err());
}

#[test]
fn zero_temperature_runs_report_clamping() {
    let task = QuadraticTask::new("t", Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
    let g = GaussianState::isotropic(Vector::zeros(2), 1.0).unwrap();
    // eta = 1 maps the covariance to zero in one step.
    let next = evolve_gaussian(&g, &task, &StepRule::gradient_descent(1.0)).unwrap();
    assert_eq!(next.clamped(), 2);
    assert!(entropy(&next).is_finite());
    assert!(evolve_gaussian(&g, &task, &StepRule::gradient_descent(2.0)).is_err());
}

fn one_dim_relaxation(eta: f64, time: f64) -> reconfig_core::thermo::Relaxation {
    let task = QuadraticTask::new("t", Matrix::from_element(1, 1, 2.0), Vector::from_element(1, 1.0)).unwrap();
    let start = GaussianState::new(Vector::from_element(1, -1.0), Matrix::from_element(1, 1, 3.0)).unwrap();
    let n = (time / eta).round() as usize;
    relax(&start, &task, &StepRule::langevin(eta, 0.5), n, MomentScheme::Exact).unwrap()
}

#[test]
fn energy_balance_and_refinement() {
    for eta in [1e-2, 1e-3, 1e-4] {
        let run = one_dim_relaxation(eta, 1.0);
        let ledger = &run.ledger;
        assert_eq!((ledger.total - ledger.free_energy_drop() - ledger.excess).abs(), 0.0);
        assert!(ledger.excess >= -1e-6);
        for w in ledger.free_energy_series.windows(2) {
            assert!(w[1] <= w[0] + 10.0 * eta * eta);
        }
        let worst = ledger.step_residuals().into_iter().fold(0.0, f64::max);
        let halved = one_dim_relaxation(eta / 2.0, 1.0).ledger.step_residuals().into_iter().fold(0.0, f64::max);
        assert!(worst / halved >= 1.8, "eta {eta}: {worst} / {halved}");
    }
}

#[test]
fn production_matches_free_energy_decay() {
    let eta = 1e-3;
    let run = one_dim_relaxation(eta, 0.5);
    let ledger = &run.ledger;
    for (s, f) in ledger.per_step_sigma.iter().zip(ledger.free_energy_series.windows(2)) {
        let rate = (f[0] - f[1]) / ledger.temperature;
        assert!((s - rate).abs() <= 10.0 * eta * s.max(rate));
    }
}

#[test]
fn gaussian_w2_cases() {
    let mut r = rng(16);
    let g = random_state(&mut r, 3);
    assert!(w2_gaussian(&g, &g).unwrap() <= 1e-7);
    let delta = gaussian_vector(&mut r, 3);
    let shifted = GaussianState::new(g.mean() + &delta, g.covariance().clone()).unwrap();
    assert_relative_eq!(w2_gaussian(&g, &shifted).unwrap(), delta.norm(), max_relative = 1e-7);
    // Commuting covariances: sum of squared differences of square roots.
    let a = GaussianState::new(Vector::zeros(2), diag(&[4.0, 1.0])).unwrap();
    let b = GaussianState::new(Vector::zeros(2), diag(&[1.0, 9.0])).unwrap();
    assert_relative_eq!(w2_gaussian(&a, &b).unwrap(), (1.0f64 + 4.0).sqrt(), max_relative = 1e-12);
    let other = GaussianState::isotropic(Vector::zeros(2), 1.0).unwrap();
    assert!(w2_gaussian(&g, &other).is_err());
}

#[test]
fn geodesic_endpoints_and_constant_speed() {
    let mut r = rng(17);
    for d in 1..6 {
        let (g0, g1) = (random_state(&mut r, d), random_state(&mut r, d));
        let path = ot_geodesic(&g0, &g1, 40).unwrap();
        assert_eq!(path[0], g0);
        assert_eq!(path[40], g1);
        let total = w2_gaussian(&g0, &g1).unwrap();
        for _ in 0..20 {
            let (i, j) = (r.gen_range(0..=40usize), r.gen_range(0..=40usize));
            let gap = (i as f64 - j as f64).abs() / 40.0;
            assert!((w2_gaussian(&path[i], &path[j]).unwrap() - gap * total).abs() <= 1e-8);
        }
    }
    let cov = random_spd(&mut r, 3, 0.5, 1.5);
    let g0 = GaussianState::new(gaussian_vector(&mut r, 3), cov.clone()).unwrap();
    let g1 = GaussianState::new(gaussian_vector(&mut r, 3), cov.clone()).unwrap();
    for (k, q) in ot_geodesic(&g0, &g1, 8).unwrap().iter().enumerate() {
        let s = k as f64 / 8.0;
        assert!((q.covariance() - &cov).norm() <= 1e-12);
        assert!((q.mean() - (g0.mean() * (1.0 - s) + g1.mean() * s)).norm() <= 1e-12);
    }
}

#[test]
fn speed_limit_holds_on_random_langevin_runs() {
    let mut r = rng(18);
    for _ in 0..100 {
        let d = r.gen_range(1..6);
        let task = random_task(&mut r, d);
        let start = random_state(&mut r, d);
        let eta = r.gen_range(0.05..1.0) / task.lambda_max();
        let rule = StepRule::langevin(eta, r.gen_range(0.1..2.0));
        let scheme = if r.gen_bool(0.5) { MomentScheme::Exact } else { MomentScheme::Euler };
        let run = relax(&start, &task, &rule, r.gen_range(1..300), scheme).unwrap();
        let slack = esl_slack(&run.ledger, &start, run.states.last().unwrap()).unwrap();
        assert!(slack >= -1e-6, "slack {slack}");
        assert!(run.ledger.excess >= -1e-6);
    }
}

#[test]
fn geodesic_saturates_the_speed_limit() {
    let mut r = rng(19);
    for _ in 0..10 {
        let d = r.gen_range(1..5);
        let task = random_task(&mut r, d);
        let (g0, g1) = (random_state(&mut r, d), random_state(&mut r, d));
        let target = 0.5 * w2_gaussian(&g0, &g1).unwrap().powi(2);
        let mut previous = f64::INFINITY;
        for n in [10, 100, 1000] {
            let path = ot_geodesic(&g0, &g1, n).unwrap();
            let ledger = path_ledger(&path, &task, 1.0).unwrap();
            let slack = esl_slack(&ledger, &g0, &g1).unwrap();
            assert!(slack.abs() <= 0.05 * target);
            assert!(slack <= previous + 1e-9 * target);
            previous = slack;
        }
    }
    let g = GaussianState::isotropic(Vector::zeros(2), 1.0).unwrap();
    let task = QuadraticTask::new("t", Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
    let still = path_ledger(&[g.clone(), g.clone()], &task, 1.0).unwrap();
    assert_eq!(esl_slack(&still, &g, &g).unwrap(), 0.0);
}

#[test]
fn ledger_rows_follow_states() {
    let run = one_dim_relaxation(1e-2, 0.1);
    let rows = ledger_rows(&run.states, &run.ledger).unwrap();
    assert_eq!(rows.len(), run.states.len());
    assert_eq!(rows[0].w2_from_start, 0.0);
    assert_eq!(rows.last().unwrap().sigma, 0.0);
    assert_eq!(rows[3].sigma, run.ledger.per_step_sigma[3]);
}

#[test]
fn exact_flow_reaches_gibbs() {
    let mut r = rng(20);
    let task = random_task(&mut r, 3);
    let rule = StepRule::langevin(0.2 / task.lambda_max(), 0.4);
    let mut g = random_state(&mut r, 3);
    for _ in 0..5000 {
        g = evolve_gaussian_exact(&g, &task, &rule).unwrap();
    }
    let gibbs = gibbs_state(&task, 0.4, 100.0).unwrap();
    assert!((g.covariance() - gibbs.covariance()).norm() <= 1e-12);
    assert!((g.mean() - gibbs.mean()).norm() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_metric_axioms(seed in any::<u64>(), d in 1usize..6) {
        let mut r = rng(seed);
        let (a, b, c) = (random_state(&mut r, d), random_state(&mut r, d), random_state(&mut r, d));
        let ab = w2_gaussian(&a, &b).unwrap();
        prop_assert_eq!(ab, w2_gaussian(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        let (bc, ac) = (w2_gaussian(&b, &c).unwrap(), w2_gaussian(&a, &c).unwrap());
        prop_assert!(ac <= ab + bc + 1e-10);
        prop_assert!(ab <= ac + bc + 1e-10);
        prop_assert!(bc <= ab + ac + 1e-10);
    }
}
