//! Coordinate-descent Lasso checked against independent oracles: normal
//! equations at alpha = 0, subgradient optimality at alpha > 0, and a
//! zooming brute-force grid on a one-feature problem.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rplan_core::probe::{coordinate_descent, lasso_objective, DesignMatrix, ProbeTrainConfig};

fn tight(alpha: f64) -> ProbeTrainConfig {
    ProbeTrainConfig {
        alpha,
        max_iterations: 200_000,
        tolerance: 1e-12,
        ..Default::default()
    }
}

/// `n x d` standard-normal features and `y = X w* + 3 + noise`.
fn random_problem(n: usize, d: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let features: Vec<f64> = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
    let truth: Vec<f64> = (0..d).map(|j| if j % 3 == 0 { 0.0 } else { j as f64 - 4.0 }).collect();
    let targets = (0..n)
        .map(|i| {
            let row = &features[i * d..(i + 1) * d];
            row.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + 3.0 + 0.5 * normal.sample(&mut rng)
        })
        .collect();
    DesignMatrix::new(features, targets, d, 0).unwrap()
}

fn predictions(design: &DesignMatrix, w: &[f64], b: f64) -> Vec<f64> {
    (0..design.n_rows())
        .map(|i| design.row(i).iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b)
        .collect()
}

#[test]
fn unpenalized_fit_matches_normal_equations() {
    for seed in [1, 2, 3] {
        let design = random_problem(50, 8, seed);
        let (n, d) = (design.n_rows(), design.n_cols());
        // augmented [X 1] normal equations
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { design.row(i)[j] } else { 1.0 });
        let y = DVector::from_column_slice(design.targets());
        let xt = x.transpose();
        let beta = (&xt * &x).cholesky().expect("full rank").solve(&(&xt * &y));
        let ols = (&x * &beta).iter().copied().collect::<Vec<_>>();

        let fit = coordinate_descent(&design, &tight(0.0)).unwrap();
        assert!(fit.converged);
        let cd = predictions(&design, &fit.weights, fit.bias);
        let rms = (cd.iter().zip(&ols).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rms < 1e-6, "seed {seed}: prediction RMS gap {rms:e}");
    }
}

#[test]
fn penalized_fit_satisfies_kkt() {
    for (seed, alpha) in [(4, 0.1), (5, 0.1), (6, 1.0), (7, 3.0)] {
        let design = random_problem(50, 8, seed);
        let n = design.n_rows() as f64;
        let fit = coordinate_descent(&design, &tight(alpha)).unwrap();
        assert!(fit.converged);
        let pred = predictions(&design, &fit.weights, fit.bias);
        let resid: Vec<f64> = design.targets().iter().zip(&pred).map(|(y, p)| y - p).collect();

        // intercept stationarity
        assert!(resid.iter().sum::<f64>().abs() / n < 1e-6);
        for j in 0..design.n_cols() {
            let g = (0..design.n_rows()).map(|i| design.row(i)[j] * resid[i]).sum::<f64>() / n;
            let w = fit.weights[j];
            if w != 0.0 {
                assert!((g - alpha * w.signum()).abs() < 1e-6, "seed {seed} j {j}: active gradient {g} vs {alpha}");
            } else {
                assert!(g.abs() <= alpha + 1e-6, "seed {seed} j {j}: inactive gradient {g} exceeds {alpha}");
            }
        }
    }
}

#[test]
fn large_penalty_zeroes_every_weight() {
    let design = random_problem(50, 8, 9);
    let fit = coordinate_descent(&design, &tight(1e3)).unwrap();
    assert!(fit.weights.iter().all(|&w| w == 0.0));
    let y_mean = design.targets().iter().sum::<f64>() / 50.0;
    assert!((fit.bias - y_mean).abs() < 1e-12);
}

#[test]
fn objective_never_increases_between_sweeps() {
    let design = random_problem(50, 8, 10);
    let fit = coordinate_descent(&design, &tight(0.3)).unwrap();
    for w in fit.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

/// Minimises the one-feature objective over `(w, b)` by repeatedly scanning
/// a grid and shrinking it around the best cell.
fn brute_force_1d(design: &DesignMatrix, alpha: f64) -> f64 {
    let (mut wc, mut bc, mut span) = (0.0, 0.0, 20.0);
    let mut best = f64::INFINITY;
    for _ in 0..60 {
        let steps = 40;
        let (mut bw, mut bb) = (wc, bc);
        for a in 0..=steps {
            for c in 0..=steps {
                let w = wc - span + 2.0 * span * a as f64 / steps as f64;
                let b = bc - span + 2.0 * span * c as f64 / steps as f64;
                let f = lasso_objective(design, &[w], b, alpha);
                if f < best {
                    (best, bw, bb) = (f, w, b);
                }
            }
        }
        (wc, bc) = (bw, bb);
        span *= 0.5;
    }
    best
}

#[test]
fn one_feature_objective_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0 + 0.3 * normal.sample(&mut rng)).collect();
    let design = DesignMatrix::new(x, y, 1, 0).unwrap();
    for alpha in [0.0, 0.1, 1.0, 5.0] {
        let fit = coordinate_descent(&design, &tight(alpha)).unwrap();
        let cd = lasso_objective(&design, &fit.weights, fit.bias, alpha);
        let grid = brute_force_1d(&design, alpha);
        assert!((cd - grid).abs() < 1e-6, "alpha {alpha}: cd {cd} vs grid {grid}");
        assert!(cd <= grid + 1e-12, "alpha {alpha}: grid found a lower objective");
    }
}
