//! Outcome distributions, their parameter gradients, per-experiment and
//! combined Fisher information matrices, and the trace Cramer-Rao bound.

use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, SymMatrix};
use crate::menu::{Experiment, ExperimentMenu};
use crate::model::{born_propagator, ModelParams};

/// Outcomes with probability at or below this floor are treated as
/// structurally forbidden.
pub const P_FLOOR: f64 = 1e-12;
/// Gradient norm above which a forbidden outcome flags diverging information
/// instead of contributing zero.
pub const G_CEILING: f64 = 1e-6;
/// Default central-difference step for parameter gradients.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Born-rule outcome probabilities and their gradients with respect to the
/// free parameters.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution {
    pub probs: Vec<f64>,
    /// grads[outcome][free parameter]
    pub grads: Vec<Vec<f64>>,
}

/// Fisher information matrix over the free parameters, evaluated at a
/// specific parameter point.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    pub m: SymMatrix,
    pub theta_at: ModelParams,
    /// Outcomes with vanishing probability but non-vanishing gradient: the
    /// information diverges there and is flagged rather than fabricated.
    pub singular_outcomes: Vec<usize>,
}

impl FisherMatrix {
    pub fn dim(&self) -> usize {
        self.m.dim()
    }
}

fn probs_from_propagator(exp: &Experiment, w: &ComplexMatrix) -> Result<Vec<f64>> {
    let rho0 = exp.state()?;
    let povm = exp.povm()?;
    let rho_t = w.matmul(&rho0)?.matmul(&w.dagger())?;
    let mut probs = Vec::with_capacity(4);
    for m in &povm {
        let p = m.matmul(&rho_t)?.trace_real(1e-9)?;
        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::NumericalIntegrity(format!(
                "outcome probability {p} outside [0, 1] for experiment {}",
                exp.id
            )));
        }
        probs.push(p.clamp(0.0, 1.0));
    }
    Ok(probs)
}

/// Outcome probabilities p_i = Tr(M_i W rho0 W^dag) for the experiment's four
/// POVM elements, with W the interaction-frame propagator at the experiment's
/// duration.
pub fn outcome_probs(exp: &Experiment, params: &ModelParams) -> Result<Vec<f64>> {
    probs_from_propagator(exp, &born_propagator(params, exp.t))
}

/// The 2p+1 parameter points used for central differences: the base point
/// followed by (theta + h e_j, theta - h e_j) for each free parameter.
fn stencil(params: &ModelParams, h: f64) -> Vec<ModelParams> {
    let p = params.free.count();
    let mut out = Vec::with_capacity(2 * p + 1);
    out.push(*params);
    for j in 0..p {
        out.push(params.shift_free(j, h));
        out.push(params.shift_free(j, -h));
    }
    out
}

fn distribution_from_stencil_probs(probs: &[Vec<f64>], h: f64) -> OutcomeDistribution {
    let n_out = probs[0].len();
    let p = (probs.len() - 1) / 2;
    let mut grads = vec![vec![0.0; p]; n_out];
    for j in 0..p {
        let plus = &probs[1 + 2 * j];
        let minus = &probs[2 + 2 * j];
        for i in 0..n_out {
            grads[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    OutcomeDistribution {
        probs: probs[0].clone(),
        grads,
    }
}

/// Outcome probabilities and central-difference gradients for one
/// experiment. For menu-wide sweeps use [`menu_fisher_matrices`], which
/// shares the 2p+1 propagator evaluations per probe time across all
/// experiments.
pub fn outcome_grads(exp: &Experiment, params: &ModelParams, h: f64) -> Result<OutcomeDistribution> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let all: Result<Vec<Vec<f64>>> = stencil(params, h)
        .iter()
        .map(|pt| probs_from_propagator(exp, &born_propagator(pt, exp.t)))
        .collect();
    Ok(distribution_from_stencil_probs(&all?, h))
}

/// Fisher matrix from an already computed outcome distribution:
/// sum_i grad p_i grad p_i^T / p_i over outcomes with p_i above the floor.
/// A floored outcome with a gradient above `G_CEILING` is recorded in
/// `singular_outcomes`.
pub fn fisher_from_distribution(dist: &OutcomeDistribution, params: &ModelParams) -> FisherMatrix {
    let p = params.free.count();
    let mut m = SymMatrix::zeros(p);
    let mut singular = Vec::new();
    for (i, (&prob, grad)) in dist.probs.iter().zip(dist.grads.iter()).enumerate() {
        if prob <= P_FLOOR {
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm > G_CEILING {
                singular.push(i);
            }
            continue;
        }
        for a in 0..p {
            for b in a..p {
                let v = m.get(a, b) + grad[a] * grad[b] / prob;
                m.set_sym(a, b, v);
            }
        }
    }
    FisherMatrix {
        m,
        theta_at: *params,
        singular_outcomes: singular,
    }
}

/// Fisher information matrix of a single experiment at the given parameters.
pub fn experiment_fisher(exp: &Experiment, params: &ModelParams) -> Result<FisherMatrix> {
    let dist = outcome_grads(exp, params, DEFAULT_FD_STEP)?;
    Ok(fisher_from_distribution(&dist, params))
}

/// Fisher matrices for every experiment in a menu.
///
/// Propagators are evaluated once per distinct probe time and stencil point
/// (2p+1 evaluations per time) and shared across experiments; the
/// per-experiment work is an order-preserving parallel map.
pub fn menu_fisher_matrices(
    menu: &ExperimentMenu,
    params: &ModelParams,
    h: f64,
) -> Result<Vec<FisherMatrix>> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let points = stencil(params, h);
    let mut cache: HashMap<u64, Vec<ComplexMatrix>> = HashMap::new();
    for t in menu.times() {
        let props = points.iter().map(|pt| born_propagator(pt, t)).collect();
        cache.insert(t.to_bits(), props);
    }
    menu.experiments
        .par_iter()
        .map(|exp| {
            let props = &cache[&exp.t.to_bits()];
            let probs: Result<Vec<Vec<f64>>> = props
                .iter()
                .map(|w| probs_from_propagator(exp, w))
                .collect();
            let dist = distribution_from_stencil_probs(&probs?, h);
            Ok(fisher_from_distribution(&dist, params))
        })
        .collect()
}

/// Weighted sum of per-experiment Fisher matrices: the information of the
/// randomized design that plays experiment E with probability lambda_E.
pub fn combined_fisher(fishers: &[FisherMatrix], weights: &[f64]) -> Result<FisherMatrix> {
    if fishers.len() != weights.len() {
        return Err(Error::Contract(format!(
            "combined_fisher: {} matrices vs {} weights",
            fishers.len(),
            weights.len()
        )));
    }
    if fishers.is_empty() {
        return Err(Error::Contract("combined_fisher: empty design".into()));
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0) {
        return Err(Error::Contract(format!("negative design weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "design weights sum to {total}, expected 1"
        )));
    }
    let p = fishers[0].dim();
    let mut m = SymMatrix::zeros(p);
    let mut singular = Vec::new();
    for (f, &w) in fishers.iter().zip(weights.iter()) {
        if f.dim() != p {
            return Err(Error::Contract("combined_fisher: mixed dimensions".into()));
        }
        m.add_scaled(&f.m, w);
        if w > 0.0 {
            singular.extend(f.singular_outcomes.iter().copied());
        }
    }
    singular.sort_unstable();
    singular.dedup();
    Ok(FisherMatrix {
        m,
        theta_at: fishers[0].theta_at,
        singular_outcomes: singular,
    })
}

/// Tr(F^-1)/n: the Cramer-Rao lower bound on the summed variance of any
/// unbiased estimator after n samples of the design.
pub fn cramer_rao_trace_bound(f: &FisherMatrix, n: usize) -> Result<f64> {
    assert!(n >= 1);
    if f.m.min_eigval() <= 1e-12 {
        return Err(Error::NotEstimable(
            "Fisher matrix is singular; some parameter direction carries no information".into(),
        ));
    }
    Ok(f.m.inverse()?.trace() / n as f64)
}

/// Fisher information of the single-qubit rotation toy scenario used to
/// study gate error: the qubit is prepared along
/// (1-eps) (cos theta, sin theta, 0) and measured projectively along x, and
/// the rotation angle theta is the single unknown.
pub fn contracted_prep_fisher(theta: f64, eps: f64) -> f64 {
    let h = DEFAULT_FD_STEP;
    let prob_plus = |th: f64| 0.5 * (1.0 + (1.0 - eps) * th.cos());
    let p = prob_plus(theta);
    let dp = (prob_plus(theta + h) - prob_plus(theta - h)) / (2.0 * h);
    let mut info = 0.0;
    for (pi, gi) in [(p, dp), (1.0 - p, -dp)] {
        if pi > P_FLOOR {
            info += gi * gi / pi;
        }
    }
    info
}

#[derive(Serialize)]
struct FisherDumpRow {
    id: usize,
    entries: Vec<f64>,
}

/// Write per-experiment Fisher matrices. Two free parameters go to CSV with
/// columns id, m11, m12, m22; other dimensions go to JSON rows of the upper
/// triangle.
pub fn write_fisher_dump(fishers: &[FisherMatrix], path: &Path) -> Result<()> {
    let p = fishers.first().map(|f| f.dim()).unwrap_or(0);
    if p == 2 {
        let mut out = String::from("id,m11,m12,m22\n");
        for (id, f) in fishers.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                id,
                f.m.get(0, 0),
                f.m.get(0, 1),
                f.m.get(1, 1)
            ));
        }
        std::fs::write(path, out)?;
    } else {
        let rows: Vec<FisherDumpRow> = fishers
            .iter()
            .enumerate()
            .map(|(id, f)| {
                let mut entries = Vec::new();
                for a in 0..p {
                    for b in a..p {
                        entries.push(f.m.get(a, b));
                    }
                }
                FisherDumpRow { id, entries }
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::menu::{build_full_menu, optimal_pair_menu, suboptimal_menu, Experiment};
    use crate::rng::CounterRng;
    use std::f64::consts::PI;

    fn theta_p() -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0)
    }

    fn stationary_experiment() -> Experiment {
        Experiment {
            id: 0,
            prep_angles: [(0.0, 0.0), (0.0, 0.0)],
            meas_angles: [(0.0, 0.0), (0.0, 0.0)],
            t: 1.0,
            prep_scale: 1.0,
            meas_scale: 1.0,
        }
    }

    #[test]
    fn stationary_state_has_unit_probability() {
        let exp = stationary_experiment();
        for (f, g) in [(0.3, -1.2), (1.1, 0.9), (2.5, 0.1)] {
            let p = outcome_probs(&exp, &ModelParams::new(f, g, 1.0)).unwrap();
            assert!((p[0] - 1.0).abs() < 1e-12);
            assert!(p[1].abs() < 1e-12 && p[2].abs() < 1e-12 && p[3].abs() < 1e-12);
        }
    }

    #[test]
    fn updown_survival_matches_rabi_formula() {
        // prep (+z, -z), measure both z; survival probability from the
        // two-level Rabi formula
        let exp = Experiment {
            id: 0,
            prep_angles: [(0.0, 0.0), (PI, 0.0)],
            meas_angles: [(0.0, 0.0), (0.0, 0.0)],
            t: 1.0,
            prep_scale: 1.0,
            meas_scale: 1.0,
        };
        let params = ModelParams::new(1.1, 0.9, 1.0);
        let probs = outcome_probs(&exp, &params).unwrap();
        let omega = params.omega();
        let expected = (omega).cos().powi(2)
            + params.delta_omega.powi(2) * (omega).sin().powi(2) / (omega * omega);
        // outcome (q1 = +, q2 = -) is index 1 in the (++, +-, -+, --) order
        assert!((probs[1] - expected).abs() < 1e-12, "{} vs {expected}", probs[1]);
    }

    #[test]
    fn probabilities_sum_to_one_across_menu() {
        let menu = build_full_menu(&[1.0]).unwrap();
        let params = theta_p();
        let mut rng = CounterRng::new(30, 0);
        for _ in 0..1000 {
            let id = (rng.next_u64() % menu.len() as u64) as usize;
            let p = outcome_probs(&menu.experiments[id], &params).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let menu = suboptimal_menu();
        let params = theta_p();
        for exp in &menu.experiments {
            let dist = outcome_grads(exp, &params, DEFAULT_FD_STEP).unwrap();
            for j in 0..2 {
                let col: f64 = dist.grads.iter().map(|g| g[j]).sum();
                assert!(col.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn stationary_experiment_has_zero_gradients_and_fisher() {
        let dist = outcome_grads(&stationary_experiment(), &theta_p(), DEFAULT_FD_STEP).unwrap();
        for g in &dist.grads {
            for &v in g {
                assert!(v.abs() <= 1e-8);
            }
        }
        let f = experiment_fisher(&stationary_experiment(), &theta_p()).unwrap();
        assert!(f.m.max_abs_diff(&SymMatrix::zeros(2)) <= 1e-12);
        assert!(f.singular_outcomes.is_empty());
    }

    #[test]
    fn richardson_step_halving_agrees() {
        let menu = optimal_pair_menu();
        let params = theta_p();
        for exp in &menu.experiments {
            let d1 = outcome_grads(exp, &params, 1e-5).unwrap();
            let d2 = outcome_grads(exp, &params, 5e-6).unwrap();
            for (g1, g2) in d1.grads.iter().flatten().zip(d2.grads.iter().flatten()) {
                if g2.abs() > 1e-6 {
                    assert!((g1 - g2).abs() / g2.abs() <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn optimal_pair_fisher_matches_reference_values() {
        let menu = optimal_pair_menu();
        let params = theta_p();
        let f1 = experiment_fisher(&menu.experiments[0], &params).unwrap();
        let f2 = experiment_fisher(&menu.experiments[1], &params).unwrap();
        let expect1 = [[2.03, -0.034], [-0.034, 2.82]];
        let expect2 = [[1.85, -0.22], [-0.22, 3.49]];
        for (f, expect) in [(&f1, &expect1), (&f2, &expect2)] {
            for a in 0..2 {
                for b in 0..2 {
                    let got = f.m.get(a, b);
                    let want = expect[a][b];
                    assert!(
                        (got - want).abs() <= 0.011 * want.abs().max(0.05),
                        "entry ({a},{b}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn combined_fisher_reference_values_and_contracts() {
        let menu = optimal_pair_menu();
        let params = theta_p();
        let fishers: Vec<_> = menu
            .experiments
            .iter()
            .map(|e| experiment_fisher(e, &params).unwrap())
            .collect();
        let single = combined_fisher(&fishers[..1], &[1.0]).unwrap();
        assert!(single.m.max_abs_diff(&fishers[0].m) == 0.0);
        let comb = combined_fisher(&fishers, &[0.2, 0.8]).unwrap();
        let expect = [[1.8853, -0.18431], [-0.18431, 3.3578]];
        for a in 0..2 {
            for b in 0..2 {
                let got = comb.m.get(a, b);
                let want = expect[a][b];
                assert!(
                    (got - want).abs() <= 0.01 * want.abs(),
                    "entry ({a},{b}): {got} vs {want}"
                );
            }
        }
        assert!(matches!(
            combined_fisher(&fishers, &[0.5]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            combined_fisher(&fishers, &[-0.1, 1.1]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            combined_fisher(&fishers, &[0.2, 0.9]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn suboptimal_uniform_fisher_matches_reference() {
        let menu = suboptimal_menu();
        let params = theta_p();
        let fishers = menu_fisher_matrices(&menu, &params, DEFAULT_FD_STEP).unwrap();
        let comb = combined_fisher(&fishers, &vec![1.0 / 12.0; 12]).unwrap();
        let expect = [[0.5417, 0.1662], [0.1662, 0.8562]];
        for a in 0..2 {
            for b in 0..2 {
                let got = comb.m.get(a, b);
                let want = expect[a][b];
                assert!(
                    (got - want).abs() <= 0.01 * want.abs(),
                    "entry ({a},{b}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn cramer_rao_bounds() {
        let menu = optimal_pair_menu();
        let params = theta_p();
        let fishers: Vec<_> = menu
            .experiments
            .iter()
            .map(|e| experiment_fisher(e, &params).unwrap())
            .collect();
        let comb = combined_fisher(&fishers, &[0.2, 0.8]).unwrap();
        let bound = cramer_rao_trace_bound(&comb, 200).unwrap();
        assert!((bound - 0.0042).abs() <= 0.03 * 0.0042, "bound {bound}");
        // diag(2,4) at n = 1
        let d = FisherMatrix {
            m: SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]),
            theta_at: params,
            singular_outcomes: vec![],
        };
        assert!((cramer_rao_trace_bound(&d, 1).unwrap() - 0.75).abs() < 1e-14);
        // singular Fisher is not estimable
        let s = FisherMatrix {
            m: SymMatrix::zeros(2),
            theta_at: params,
            singular_outcomes: vec![],
        };
        assert!(matches!(
            cramer_rao_trace_bound(&s, 1),
            Err(Error::NotEstimable(_))
        ));
    }

    #[test]
    fn fisher_matrices_are_symmetric_psd() {
        let menu = suboptimal_menu();
        let fishers = menu_fisher_matrices(&menu, &theta_p(), DEFAULT_FD_STEP).unwrap();
        for f in &fishers {
            assert!(f.m.min_eigval() >= -1e-10);
        }
    }

    #[test]
    fn mixing_linearity() {
        let menu = suboptimal_menu();
        let fishers = menu_fisher_matrices(&menu, &theta_p(), DEFAULT_FD_STEP).unwrap();
        let l1 = vec![1.0 / 12.0; 12];
        let mut l2 = vec![0.0; 12];
        l2[0] = 0.5;
        l2[5] = 0.5;
        let alpha = 0.3;
        let mixed: Vec<f64> = l1
            .iter()
            .zip(l2.iter())
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let f_mixed = combined_fisher(&fishers, &mixed).unwrap();
        let f1 = combined_fisher(&fishers, &l1).unwrap();
        let f2 = combined_fisher(&fishers, &l2).unwrap();
        let mut expect = SymMatrix::zeros(2);
        expect.add_scaled(&f1.m, alpha);
        expect.add_scaled(&f2.m, 1.0 - alpha);
        assert!(f_mixed.m.max_abs_diff(&expect) <= 1e-14);
    }

    #[test]
    fn g_periodicity_of_fisher() {
        let menu = optimal_pair_menu();
        let t = 1.0;
        let p1 = ModelParams::new(1.3, 0.4, 1.0);
        let p2 = ModelParams::new(1.3, 0.4 + PI / t, 1.0);
        for exp in &menu.experiments {
            let f1 = experiment_fisher(exp, &p1).unwrap();
            let f2 = experiment_fisher(exp, &p2).unwrap();
            assert!(f1.m.max_abs_diff(&f2.m) <= 1e-8);
        }
    }

    #[test]
    fn gate_error_scaling_first_order_coefficient() {
        // I(eps)/I(0) for the single-qubit rotation scenario should have a
        // fitted slope of -2 in eps, matching the (1-eps)^2 contraction law
        let theta = PI / 2.0;
        let i0 = contracted_prep_fisher(theta, 0.0);
        let eps_grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.005).collect();
        let ratios: Vec<f64> = eps_grid
            .iter()
            .map(|&e| contracted_prep_fisher(theta, e) / i0)
            .collect();
        // least-squares slope through (eps, ratio)
        let n = eps_grid.len() as f64;
        let sx: f64 = eps_grid.iter().sum();
        let sy: f64 = ratios.iter().sum();
        let sxx: f64 = eps_grid.iter().map(|x| x * x).sum();
        let sxy: f64 = eps_grid.iter().zip(&ratios).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope + 2.0).abs() <= 0.2, "slope {slope}");
    }

    #[test]
    fn three_parameter_fisher_when_detuning_is_free() {
        let mut params = theta_p();
        params.free.delta_omega = true;
        let menu = optimal_pair_menu();
        let f = experiment_fisher(&menu.experiments[1], &params).unwrap();
        assert_eq!(f.dim(), 3);
        assert!(f.m.min_eigval() >= -1e-10);
        // the (F, G) block agrees with the two-parameter computation
        let two = experiment_fisher(&menu.experiments[1], &theta_p()).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((f.m.get(a, b) - two.m.get(a, b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn menu_sweep_matches_per_experiment_path() {
        let menu = suboptimal_menu();
        let params = theta_p();
        let swept = menu_fisher_matrices(&menu, &params, DEFAULT_FD_STEP).unwrap();
        for (exp, f) in menu.experiments.iter().zip(swept.iter()) {
            let direct = experiment_fisher(exp, &params).unwrap();
            assert!(f.m.max_abs_diff(&direct.m) <= 1e-14);
        }
    }
}
