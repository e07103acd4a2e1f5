//! Acceptance suite: one test per release criterion, each printing a
//! PASS/value line (visible with `--nocapture`). Every tolerance is pinned
//! here, in code.
//!
//! Run with: cargo test -p qest --test acceptance -- --nocapture

use std::time::Instant;

use qest::design::{
    brute_force_design, equivalence_gap, optimize_a_design, schur_certificate, DesignWeights,
    SolverOptions,
};
use qest::estimate::{
    log_likelihood, mle_grid, mle_refine, mse_curve, sample_dataset, GridSpec,
};
use qest::fisher::{
    combined_fisher, contracted_prep_fisher, cramer_rao_trace_bound, experiment_fisher,
    menu_fisher_matrices, outcome_probs, FisherMatrix, DEFAULT_FD_STEP,
};
use qest::linalg::SymMatrix;
use qest::menu::{axes13, build_full_menu, constellation26, optimal_pair_menu, suboptimal_menu};
use qest::model::{unitary_closed, unitary_numeric, ModelParams};
use qest::rng::CounterRng;

const PI: f64 = std::f64::consts::PI;

fn theta_p() -> ModelParams {
    ModelParams::new(1.0, 1.0, 1.0)
}

fn theta_t() -> ModelParams {
    ModelParams::new(1.1, 0.9, 1.0)
}

/// |got - printed| <= max(rel * |printed|, half the last printed decimal).
/// Reference values rounded to two significant digits cannot be pinned
/// tighter than their own rounding interval.
fn assert_close_printed(got: f64, printed: f64, rel: f64, quantum: f64, label: &str) {
    let tol = (rel * printed.abs()).max(0.5 * quantum);
    assert!(
        (got - printed).abs() <= tol,
        "{label}: {got} vs printed {printed} (tol {tol})"
    );
}

fn assert_matrix_close(
    got: &SymMatrix,
    printed: [[f64; 2]; 2],
    quantum: [[f64; 2]; 2],
    rel: f64,
    label: &str,
) {
    for i in 0..2 {
        for j in 0..2 {
            assert_close_printed(
                got.get(i, j),
                printed[i][j],
                rel,
                quantum[i][j],
                &format!("{label}[{i}][{j}]"),
            );
        }
    }
}

fn optimal_pair_fishers(at: &ModelParams) -> Vec<FisherMatrix> {
    optimal_pair_menu()
        .experiments
        .iter()
        .map(|e| experiment_fisher(e, at).unwrap())
        .collect()
}

#[test]
fn c01_menu_cardinality() {
    let start = Instant::now();
    assert_eq!(constellation26().len(), 26);
    assert_eq!(axes13().len(), 13);
    let menu = build_full_menu(&[1.0]).unwrap();
    assert_eq!(menu.len(), 114_244);
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!("PASS c01: 26 states, 13 axes, 114244 experiments ({dt:?})");
}

#[test]
fn c02_component_fisher_matrices() {
    let start = Instant::now();
    let fishers = optimal_pair_fishers(&theta_p());
    // first configuration (design weight 0.2)
    assert_matrix_close(
        &fishers[0].m,
        [[2.03, -0.034], [-0.034, 2.82]],
        [[0.01, 0.001], [0.001, 0.01]],
        0.01,
        "I_0.2",
    );
    assert_matrix_close(
        &fishers[0].m.inverse().unwrap(),
        [[0.49, 0.0059], [0.0059, 0.35]],
        [[0.01, 0.0001], [0.0001, 0.01]],
        0.02,
        "inv I_0.2",
    );
    // second configuration (design weight 0.8)
    assert_matrix_close(
        &fishers[1].m,
        [[1.85, -0.22], [-0.22, 3.49]],
        [[0.01, 0.01], [0.01, 0.01]],
        0.01,
        "I_0.8",
    );
    assert_matrix_close(
        &fishers[1].m.inverse().unwrap(),
        [[0.54, 0.035], [0.035, 0.29]],
        [[0.01, 0.001], [0.001, 0.01]],
        0.02,
        "inv I_0.8",
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!(
        "PASS c02: component Fisher matrices match reference (I1_11 {:.4}, I2_11 {:.4}) ({dt:?})",
        fishers[0].m.get(0, 0),
        fishers[1].m.get(0, 0)
    );
}

#[test]
fn c03_combined_optimal_fisher() {
    let start = Instant::now();
    let fishers = optimal_pair_fishers(&theta_p());
    let combined = combined_fisher(&fishers, &[0.2, 0.8]).unwrap();
    assert_matrix_close(
        &combined.m,
        [[1.8853, -0.18431], [-0.18431, 3.3578]],
        [[0.0001, 0.00001], [0.00001, 0.0001]],
        0.01,
        "combined",
    );
    let bound = cramer_rao_trace_bound(&combined, 200).unwrap();
    assert!(
        (bound - 0.0042).abs() <= 0.03 * 0.0042,
        "CR bound {bound} vs 0.0042"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!("PASS c03: combined Fisher and Tr(inv)/200 = {bound:.6} ({dt:?})");
}

#[test]
fn c04_suboptimal_fisher() {
    let start = Instant::now();
    let menu = suboptimal_menu();
    let fishers = menu_fisher_matrices(&menu, &theta_p(), DEFAULT_FD_STEP).unwrap();
    let combined = combined_fisher(&fishers, &vec![1.0 / 12.0; 12]).unwrap();
    assert_matrix_close(
        &combined.m,
        [[0.5417, 0.1662], [0.1662, 0.8562]],
        [[0.0001, 0.0001], [0.0001, 0.0001]],
        0.01,
        "suboptimal",
    );
    let bound = cramer_rao_trace_bound(&combined, 200).unwrap();
    assert!(
        (bound - 0.016).abs() <= 0.03 * 0.016,
        "CR bound {bound} vs 0.016"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!("PASS c04: suboptimal Fisher and Tr(inv)/200 = {bound:.5} ({dt:?})");
}

#[test]
fn c05_full_design_solve() {
    let start = Instant::now();
    let menu = build_full_menu(&[1.0]).unwrap();
    let fishers = menu_fisher_matrices(&menu, &theta_p(), DEFAULT_FD_STEP).unwrap();
    let result = optimize_a_design(&fishers, &SolverOptions::default()).unwrap();
    let dt = start.elapsed();
    assert!(result.converged, "solver did not converge");
    assert!(
        (0.81..=0.86).contains(&result.objective),
        "objective {} outside [0.81, 0.86]",
        result.objective
    );
    assert!(
        result.equivalence_gap <= 1e-5 * result.objective,
        "gap {} too large",
        result.equivalence_gap
    );
    assert!(
        result.merged_support.len() <= 6,
        "merged support size {}",
        result.merged_support.len()
    );
    if result.merged_support.len() == 2 {
        let mut w: Vec<f64> = result.merged_support.iter().map(|g| g.weight).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((w[0] - 0.2).abs() <= 0.02, "small weight {}", w[0]);
        assert!((w[1] - 0.8).abs() <= 0.02, "large weight {}", w[1]);
    }
    assert!(dt.as_secs_f64() < 180.0, "took {dt:?}");
    println!(
        "PASS c05: objective {:.5}, gap {:.2e}, merged support {} ({dt:?})",
        result.objective,
        result.equivalence_gap,
        result.merged_support.len()
    );
}

#[test]
fn c06_solver_vs_brute_force_oracle() {
    let start = Instant::now();
    let menu = build_full_menu(&[1.0]).unwrap();
    let all = menu_fisher_matrices(&menu, &theta_p(), DEFAULT_FD_STEP).unwrap();
    let mut rng = CounterRng::new(606, 0);
    let mut checked = 0;
    while checked < 20 {
        let fishers: Vec<FisherMatrix> = (0..5)
            .map(|_| all[(rng.next_u64() % all.len() as u64) as usize].clone())
            .collect();
        let solved = match optimize_a_design(&fishers, &SolverOptions::default()) {
            Ok(r) if r.converged => r,
            _ => continue, // singular 5-subset; draw another
        };
        let brute = brute_force_design(&fishers, 0.01).unwrap();
        let brute_obj = {
            let combined = combined_fisher(&fishers, &brute.weights).unwrap();
            combined.m.inverse().unwrap().trace()
        };
        assert!(
            solved.objective <= brute_obj * 1.005,
            "menu {checked}: solver {} vs brute {brute_obj}",
            solved.objective
        );
        checked += 1;
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}");
    println!("PASS c06: solver within 0.5% of the simplex-grid oracle on 20 menus ({dt:?})");
}

#[test]
fn c07_propagator_oracle() {
    let start = Instant::now();
    let mut rng = CounterRng::new(707, 0);
    let mut max_numeric_diff: f64 = 0.0;
    let mut max_unitarity: f64 = 0.0;
    let mut max_semigroup: f64 = 0.0;
    for _ in 0..100 {
        let params = ModelParams::new(
            rng.next_range(-3.0, 3.0),
            rng.next_range(-3.0, 3.0),
            rng.next_range(-2.0, 2.0),
        );
        let t = rng.next_range(0.0, 5.0);
        let s = rng.next_range(-5.0, 5.0);
        let closed = unitary_closed(&params, t).u;
        let numeric = unitary_numeric(&params, t, 10_000).u;
        max_numeric_diff = max_numeric_diff.max(closed.max_abs_diff(&numeric));
        max_unitarity = max_unitarity.max(closed.unitarity_defect());
        let us = unitary_closed(&params, s).u;
        let uts = unitary_closed(&params, t + s).u;
        max_semigroup = max_semigroup.max(closed.matmul(&us).unwrap().max_abs_diff(&uts));
    }
    assert!(max_numeric_diff <= 1e-7, "numeric diff {max_numeric_diff}");
    assert!(max_unitarity <= 1e-10, "unitarity {max_unitarity}");
    assert!(max_semigroup <= 1e-10, "semigroup {max_semigroup}");
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    println!(
        "PASS c07: oracle diff {max_numeric_diff:.2e}, unitarity {max_unitarity:.2e}, semigroup {max_semigroup:.2e} ({dt:?})"
    );
}

#[test]
fn c08_periodicity_in_g() {
    use rayon::prelude::*;
    let start = Instant::now();
    // single probe time: every outcome probability is invariant under
    // G -> G + pi/t
    let menu = build_full_menu(&[1.0]).unwrap();
    let a = ModelParams::new(1.3, 0.7, 1.0);
    let b = ModelParams::new(1.3, 0.7 + PI, 1.0);
    let max_dev = menu
        .experiments
        .par_iter()
        .map(|e| {
            let pa = outcome_probs(e, &a).unwrap();
            let pb = outcome_probs(e, &b).unwrap();
            pa.iter()
                .zip(pb.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    assert!(max_dev <= 1e-8, "probability deviation {max_dev}");
    // the log-likelihood inherits the invariance
    let pair = optimal_pair_menu();
    let ds = sample_dataset(&pair, &DesignWeights::new(vec![0.2, 0.8]), &theta_t(), 200, 8)
        .unwrap();
    for (f, g) in [(0.6, 0.2), (1.1, 0.9), (2.2, 1.7)] {
        let la = log_likelihood(&ds, &pair, &ModelParams::new(f, g, 1.0)).unwrap();
        let lb = log_likelihood(&ds, &pair, &ModelParams::new(f, g + PI, 1.0)).unwrap();
        assert!((la - lb).abs() <= 1e-8, "loglik deviation {}", (la - lb).abs());
    }
    // multiple probe times break the invariance
    let multi = build_full_menu(&[1.0, 1.1, 1.4]).unwrap();
    let break_dev = multi
        .experiments
        .iter()
        .step_by(97)
        .map(|e| {
            let pa = outcome_probs(e, &a).unwrap();
            let pb = outcome_probs(e, &b).unwrap();
            pa.iter()
                .zip(pb.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    assert!(break_dev > 1e-3, "multi-time deviation only {break_dev}");
    let dt = start.elapsed();
    println!(
        "PASS c08: single-time invariance {max_dev:.2e}, multi-time break {break_dev:.3} ({dt:?})"
    );
}

#[test]
fn c09_statistical_saturation() {
    use rayon::prelude::*;
    let start = Instant::now();
    let menu = optimal_pair_menu();
    let weights = DesignWeights::new(vec![0.2, 0.8]);
    let fishers = optimal_pair_fishers(&theta_p());
    let combined = combined_fisher(&fishers, &[0.2, 0.8]).unwrap();
    let n = 10_000u64;
    let bound = cramer_rao_trace_bound(&combined, n as usize).unwrap();
    let grid = GridSpec {
        f_min: 0.0,
        f_max: 3.0,
        nf: 151,
        g_min: 0.0,
        g_max: PI,
        ng: 101,
    };
    let trials = 200;
    let estimates: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let ds = sample_dataset(&menu, &weights, &theta_t(), n, 9000 + trial).unwrap();
            let surface = mle_grid(&ds, &menu, &theta_p(), &grid).unwrap();
            let est = mle_refine(&ds, &menu, &theta_p(), surface.argmax).unwrap();
            (est.f, est.g)
        })
        .collect();
    let mean_f = estimates.iter().map(|e| e.0).sum::<f64>() / trials as f64;
    let mean_g = estimates.iter().map(|e| e.1).sum::<f64>() / trials as f64;
    let var_f = estimates.iter().map(|e| (e.0 - mean_f).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let var_g = estimates.iter().map(|e| (e.1 - mean_g).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let total = var_f + var_g;
    let ratio = total / bound;
    assert!(
        (0.8..=1.5).contains(&ratio),
        "Var sum {total:.3e} is {ratio:.2}x the bound {bound:.3e}"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 600.0, "took {dt:?}");
    println!(
        "PASS c09: Var[F]+Var[G] = {total:.3e} = {ratio:.2}x CR bound at N=10^4 ({dt:?})"
    );
}

#[test]
fn c10_design_superiority_and_equal_mse_ratio() {
    let start = Instant::now();
    let n_list = [50u64, 100, 200, 400, 800];
    let trials = 100;
    let grid = GridSpec {
        f_min: 0.0,
        f_max: 3.0,
        nf: 121,
        g_min: 0.0,
        g_max: PI,
        ng: 81,
    };
    let opt_rows = mse_curve(
        &optimal_pair_menu(),
        &DesignWeights::new(vec![0.2, 0.8]),
        &theta_t(),
        &theta_p(),
        &n_list,
        trials,
        1010,
        &grid,
    )
    .unwrap();
    let sub_rows = mse_curve(
        &suboptimal_menu(),
        &DesignWeights::uniform(12),
        &theta_t(),
        &theta_p(),
        &n_list,
        trials,
        2020,
        &grid,
    )
    .unwrap();
    for (o, s) in opt_rows.iter().zip(sub_rows.iter()) {
        assert!(
            o.mse_median <= s.mse_median,
            "median MSE at n {}: optimal {} vs suboptimal {}",
            o.n,
            o.mse_median,
            s.mse_median
        );
    }
    // Equal-MSE experiment ratio: the reference strategy performs N = 200
    // runs; how many runs does the optimal design need for the same mean
    // MSE? The ratio 200 / N_opt should be roughly 2. (The opposite
    // anchoring is pinned at the trace ratio of the two Cramer-Rao bounds,
    // 3.9, for any consistent estimator, so it cannot be what "roughly
    // twice" describes.) N_opt comes from log-log interpolation of the
    // optimal design's mean-MSE curve.
    let target = sub_rows[2].mse_mean.max(f64::MIN_POSITIVE);
    let xs: Vec<f64> = opt_rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = opt_rows.iter().map(|r| r.mse_mean.ln()).collect();
    let ty = target.ln();
    let mut n_opt = None;
    for w in 0..xs.len() - 1 {
        let (y0, y1) = (ys[w], ys[w + 1]);
        if (y0 - ty) * (y1 - ty) <= 0.0 {
            let frac = (ty - y0) / (y1 - y0);
            n_opt = Some((xs[w] + frac * (xs[w + 1] - xs[w])).exp());
            break;
        }
    }
    // extrapolate along the first segment when the optimal curve starts
    // below the target
    let n_opt = n_opt.unwrap_or_else(|| {
        let slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        (xs[0] + (ty - ys[0]) / slope).exp()
    });
    let ratio = 200.0 / n_opt;
    assert!(
        (1.4..=2.8).contains(&ratio),
        "equal-MSE experiment ratio {ratio:.2} outside [1.4, 2.8] (N_opt {n_opt:.0})"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 900.0, "took {dt:?}");
    println!(
        "PASS c10: optimal median MSE below suboptimal at every N; equal-MSE ratio {ratio:.2} ({dt:?})"
    );
}

#[test]
fn c11_gate_error_scaling() {
    let start = Instant::now();
    let theta = PI / 2.0;
    let i0 = contracted_prep_fisher(theta, 0.0);
    let eps: Vec<f64> = (0..=10).map(|k| k as f64 * 0.005).collect();
    let ratios: Vec<f64> = eps
        .iter()
        .map(|&e| contracted_prep_fisher(theta, e) / i0)
        .collect();
    let n = eps.len() as f64;
    let sx: f64 = eps.iter().sum();
    let sy: f64 = ratios.iter().sum();
    let sxx: f64 = eps.iter().map(|x| x * x).sum();
    let sxy: f64 = eps.iter().zip(&ratios).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(
        (slope + 2.0).abs() <= 0.2,
        "fitted slope {slope} vs -2 within 10%"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    println!("PASS c11: I(eps)/I(0) slope {slope:.4} (target -2 +/- 10%) ({dt:?})");
}

#[test]
fn c12_schur_certificate_agreement() {
    let start = Instant::now();
    let mut rng = CounterRng::new(1212, 0);
    let mut disagreements = 0;
    let random_psd = |rng: &mut CounterRng, scale: f64| {
        let a: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..2).map(|_| rng.next_range(-scale, scale)).collect())
            .collect();
        let mut m = SymMatrix::zeros(2);
        for i in 0..2 {
            for j in i..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    v += a[k][i] * a[k][j];
                }
                m.set_sym(i, j, v);
            }
        }
        m
    };
    let mut done = 0;
    while done < 1000 {
        let mut fm = random_psd(&mut rng, 1.2);
        fm.add_scaled(&SymMatrix::identity(2), 0.05);
        let fisher = FisherMatrix {
            m: fm,
            theta_at: theta_p(),
            singular_outcomes: vec![],
        };
        let finv = fisher.m.inverse().unwrap();
        let mut q = finv.clone();
        if rng.next_f64() < 0.5 {
            q.add_scaled(&random_psd(&mut rng, 0.7), 1.0);
        } else {
            q.add_scaled(&SymMatrix::identity(2), -rng.next_range(0.001, 0.4));
        }
        let block = schur_certificate(&q, &fisher);
        let mut diff = q.clone();
        diff.add_scaled(&finv, -1.0);
        let direct = diff.min_eigval() >= -1e-9;
        if block != direct {
            disagreements += 1;
        }
        done += 1;
    }
    assert_eq!(disagreements, 0, "{disagreements} disagreements in 1000 trials");
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    println!("PASS c12: block-PSD test agrees with direct eigenvalue test on 1000 instances ({dt:?})");
}

#[test]
fn c13_robustness_dispersion_ordering() {
    use qest::sweep::{landscape_stats, robustness_landscape};
    let start = Instant::now();
    let grid = GridSpec {
        f_min: 0.25,
        f_max: 2.0,
        nf: 36,
        g_min: 0.25,
        g_max: 2.0,
        ng: 36,
    };
    let opt = robustness_landscape(&optimal_pair_menu(), &DesignWeights::new(vec![0.2, 0.8]), &grid)
        .unwrap();
    let sub = robustness_landscape(&suboptimal_menu(), &DesignWeights::uniform(12), &grid).unwrap();
    let so = landscape_stats(&opt).unwrap();
    let ss = landscape_stats(&sub).unwrap();
    let disp_opt = (so.inv11.max / so.inv11.mean).max(so.inv22.max / so.inv22.mean);
    let disp_sub = (ss.inv11.max / ss.inv11.mean).max(ss.inv22.max / ss.inv22.mean);
    assert!(
        disp_opt > disp_sub,
        "optimal dispersion {disp_opt:.2} not above suboptimal {disp_sub:.2}"
    );
    // the finely tuned two-experiment design degrades sharply away from its
    // design point; the twelve-configuration strategy stays moderate
    assert!(disp_opt >= 5.0, "optimal dispersion only {disp_opt:.2}");
    assert!(disp_sub <= 3.0, "suboptimal dispersion {disp_sub:.2}");
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 600.0, "took {dt:?}");
    println!(
        "PASS c13: dispersion optimal {disp_opt:.2} > suboptimal {disp_sub:.2} ({dt:?})"
    );
}
