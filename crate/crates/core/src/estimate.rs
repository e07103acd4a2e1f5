//! Dataset simulation under a design, multinomial log-likelihood, grid and
//! simplex maximum-likelihood estimation, the adaptive design loop, and
//! MSE-versus-N curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::design::{optimize_a_design, DesignResult, DesignWeights, SolverOptions};
use crate::error::{Error, Result};
use crate::fisher::{combined_fisher, menu_fisher_matrices, P_FLOOR};
use crate::linalg::ComplexMatrix;
use crate::menu::ExperimentMenu;
use crate::model::{born_propagator, ModelParams};
use crate::rng::{derive_seed, CounterRng};

/// Outcome counts for one experiment of the menu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: usize,
    pub n_runs: u64,
    pub counts: [u64; 4],
}

/// Per-experiment outcome counts from (simulated) runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeDataset {
    pub seed: u64,
    pub total_n: u64,
    pub entries: Vec<DatasetEntry>,
    /// Set when the generating parameters are not recorded anywhere in the
    /// dataset; estimation code never sees the truth.
    #[serde(default = "default_true")]
    pub truth_hidden: bool,
}

fn default_true() -> bool {
    true
}

/// Rectangular evaluation grid over the two free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub nf: usize,
    pub g_min: f64,
    pub g_max: f64,
    pub ng: usize,
}

impl GridSpec {
    pub fn f_axis(&self) -> Vec<f64> {
        linspace(self.f_min, self.f_max, self.nf)
    }

    pub fn g_axis(&self) -> Vec<f64> {
        linspace(self.g_min, self.g_max, self.ng)
    }

    /// Default search region: F in [0, 3]; G spans one period pi/t when all
    /// probe times are equal (the likelihood is exactly periodic there) and
    /// widens to [0, 2 pi) for multi-time menus.
    pub fn default_for(menu: &ExperimentMenu) -> Self {
        let times = menu.times();
        let single = times.len() == 1;
        let g_max = if single {
            std::f64::consts::PI / times[0]
        } else {
            2.0 * std::f64::consts::PI
        };
        GridSpec {
            f_min: 0.0,
            f_max: 3.0,
            nf: 301,
            g_min: 0.0,
            g_max,
            ng: if single { 301 } else { 601 },
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least 2 points per axis");
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Dense log-likelihood over the (F, G) grid.
#[derive(Debug, Clone)]
pub struct LikelihoodSurface {
    pub f_axis: Vec<f64>,
    pub g_axis: Vec<f64>,
    /// loglik[fi][gi]; -inf marks observed outcomes that the candidate
    /// parameters forbid.
    pub loglik: Vec<Vec<f64>>,
    pub argmax: (f64, f64),
}

/// Integer apportionment of n runs across the design by largest remainder;
/// the result sums to n exactly.
pub fn allocate_runs(weights: &DesignWeights, n: u64) -> Vec<u64> {
    let w = &weights.weights;
    let mut counts: Vec<u64> = w.iter().map(|wi| (wi * n as f64).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(i, wi)| (i, wi * n as f64 - (wi * n as f64).floor()))
        .collect();
    // largest remainder first; ties to the lower index
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(n - assigned) as usize {
        counts[remainders[k].0] += 1;
    }
    counts
}

/// Draw a dataset of n runs distributed over the design, sampling outcomes
/// from the model at `truth`. Each experiment consumes its own counter-based
/// stream keyed by (seed, id), so the result is bit-identical for a fixed
/// (seed, menu, weights, n) under any execution order.
pub fn sample_dataset(
    menu: &ExperimentMenu,
    weights: &DesignWeights,
    truth: &ModelParams,
    n: u64,
    seed: u64,
) -> Result<OutcomeDataset> {
    assert!(n >= 1);
    if weights.weights.len() != menu.len() {
        return Err(Error::Contract(
            "sample_dataset: weights do not match the menu".into(),
        ));
    }
    let runs = allocate_runs(weights, n);
    let entries: Result<Vec<Option<DatasetEntry>>> = menu
        .experiments
        .par_iter()
        .zip(runs.par_iter())
        .map(|(exp, &n_runs)| {
            if n_runs == 0 {
                return Ok(None);
            }
            let probs = crate::fisher::outcome_probs(exp, truth)?;
            let mut rng = CounterRng::new(seed, exp.id as u64);
            let mut counts = [0u64; 4];
            for _ in 0..n_runs {
                counts[rng.next_categorical(&probs)] += 1;
            }
            Ok(Some(DatasetEntry {
                id: exp.id,
                n_runs,
                counts,
            }))
        })
        .collect();
    let entries: Vec<DatasetEntry> = entries?.into_iter().flatten().collect();
    Ok(OutcomeDataset {
        seed,
        total_n: n,
        entries,
        truth_hidden: true,
    })
}

/// Per-entry operators cached for repeated likelihood evaluation.
struct PreparedEntry {
    rho0: ComplexMatrix,
    povm: [ComplexMatrix; 4],
    t: f64,
    counts: [u64; 4],
}

struct PreparedDataset {
    entries: Vec<PreparedEntry>,
    times: Vec<f64>,
}

impl PreparedDataset {
    fn new(dataset: &OutcomeDataset, menu: &ExperimentMenu) -> Result<Self> {
        let mut entries = Vec::with_capacity(dataset.entries.len());
        let mut times: Vec<f64> = Vec::new();
        for d in &dataset.entries {
            let exp = menu.get(d.id)?;
            let total: u64 = d.counts.iter().sum();
            if total != d.n_runs {
                return Err(Error::Contract(format!(
                    "entry {} counts sum to {total}, expected {}",
                    d.id, d.n_runs
                )));
            }
            entries.push(PreparedEntry {
                rho0: exp.state()?,
                povm: exp.povm()?,
                t: exp.t,
                counts: d.counts,
            });
            if !times.iter().any(|t| t.to_bits() == exp.t.to_bits()) {
                times.push(exp.t);
            }
        }
        Ok(Self { entries, times })
    }

    /// Sum over entries of counts * ln p; -inf when an observed outcome is
    /// forbidden at these parameters.
    fn eval(&self, params: &ModelParams) -> f64 {
        let props: Vec<(u64, ComplexMatrix)> = self
            .times
            .iter()
            .map(|&t| (t.to_bits(), born_propagator(params, t)))
            .collect();
        let mut ll = 0.0;
        for e in &self.entries {
            let w = &props
                .iter()
                .find(|(bits, _)| *bits == e.t.to_bits())
                .expect("time cached")
                .1;
            let rho_t = w
                .matmul(&e.rho0)
                .and_then(|m| m.matmul(&w.dagger()))
                .expect("4x4 products");
            for (m, &c) in e.povm.iter().zip(e.counts.iter()) {
                if c == 0 {
                    continue;
                }
                let p = m
                    .matmul(&rho_t)
                    .and_then(|mm| mm.trace_real(1e-9))
                    .unwrap_or(0.0)
                    .clamp(0.0, 1.0);
                if p <= P_FLOOR {
                    return f64::NEG_INFINITY;
                }
                ll += c as f64 * p.ln();
            }
        }
        ll
    }
}

/// Multinomial log-likelihood of the dataset at `params`, up to additive
/// constants that do not depend on the parameters (multinomial coefficients
/// and the design weights).
pub fn log_likelihood(
    dataset: &OutcomeDataset,
    menu: &ExperimentMenu,
    params: &ModelParams,
) -> Result<f64> {
    Ok(PreparedDataset::new(dataset, menu)?.eval(params))
}

/// Dense evaluation of the log-likelihood over the grid, with the fixed
/// parameters (the detuning) taken from `base`; the argmax breaks ties
/// toward the lowest (F, then G).
pub fn mle_grid(
    dataset: &OutcomeDataset,
    menu: &ExperimentMenu,
    base: &ModelParams,
    grid: &GridSpec,
) -> Result<LikelihoodSurface> {
    let prepared = PreparedDataset::new(dataset, menu)?;
    let f_axis = grid.f_axis();
    let g_axis = grid.g_axis();
    let loglik: Vec<Vec<f64>> = f_axis
        .par_iter()
        .map(|&f| {
            g_axis
                .iter()
                .map(|&g| prepared.eval(&base.with_free_values(&[f, g])))
                .collect()
        })
        .collect();
    // ties at numerical-noise level break toward the lowest (F, then G)
    let mut best_ll = f64::NEG_INFINITY;
    for row in &loglik {
        for &ll in row {
            if ll > best_ll {
                best_ll = ll;
            }
        }
    }
    let tie_tol = 1e-9 * (1.0 + best_ll.abs());
    let mut best = (0usize, 0usize);
    'scan: for (fi, row) in loglik.iter().enumerate() {
        for (gi, &ll) in row.iter().enumerate() {
            if ll >= best_ll - tie_tol {
                best = (fi, gi);
                break 'scan;
            }
        }
    }
    Ok(LikelihoodSurface {
        argmax: (f_axis[best.0], g_axis[best.1]),
        f_axis,
        g_axis,
        loglik,
    })
}

/// Nelder-Mead polish of the likelihood maximum from a grid start.
/// Terminates when the simplex diameter drops below 1e-6 or after 500
/// iterations; never returns a point worse than the start.
pub fn mle_refine(
    dataset: &OutcomeDataset,
    menu: &ExperimentMenu,
    base: &ModelParams,
    start: (f64, f64),
) -> Result<ModelParams> {
    let prepared = PreparedDataset::new(dataset, menu)?;
    let objective = |v: &[f64]| -> f64 { -prepared.eval(&base.with_free_values(v)) };
    let x0 = vec![start.0, start.1];
    if !objective(&x0).is_finite() {
        return Err(Error::RefineFromInvalidStart);
    }
    let best = nelder_mead(objective, &x0, 0.05, 1e-6, 500);
    Ok(base.with_free_values(&best))
}

/// Minimal deterministic Nelder-Mead for 2-3 dimensional polishing.
fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    diameter_tol: f64,
    max_iters: usize,
) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fx0 = f(x0);
    simplex.push((x0.to_vec(), fx0));
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| {
                x.iter()
                    .zip(simplex[0].0.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter <= diameter_tol {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(worst.0.iter())
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(worst.0.iter())
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let fe = f(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(worst.0.iter())
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best
                        .iter()
                        .zip(entry.0.iter())
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let fs = f(&shrunk);
                    *entry = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex.swap_remove(0).0
}

/// One round of the adaptive procedure.
#[derive(Debug)]
pub struct AdaptiveRound {
    pub round: usize,
    pub design: DesignResult,
    pub estimate: ModelParams,
}

/// The adaptive loop: at each round, compute Fisher matrices at the current
/// guess, optimize the design, draw a fresh dataset, estimate by grid +
/// refine over everything collected so far, and feed the estimate forward as
/// the next round's guess. Each round's MLE pools the data of all rounds, so
/// the error shrinks with the cumulative run count.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_loop(
    menu: &ExperimentMenu,
    theta_guess: &ModelParams,
    truth: &ModelParams,
    rounds: usize,
    n_per_round: u64,
    seed: u64,
    solver_opts: &SolverOptions,
    grid: &GridSpec,
) -> Result<Vec<AdaptiveRound>> {
    assert!(rounds >= 1);
    let mut guess = *theta_guess;
    let mut trace = Vec::with_capacity(rounds);
    let mut pooled = OutcomeDataset {
        seed,
        total_n: 0,
        entries: vec![],
        truth_hidden: true,
    };
    for round in 0..rounds {
        let fishers = menu_fisher_matrices(menu, &guess, crate::fisher::DEFAULT_FD_STEP)?;
        let design = optimize_a_design(&fishers, solver_opts)?;
        let dataset = sample_dataset(
            menu,
            &design.weights,
            truth,
            n_per_round,
            derive_seed(seed, round as u64),
        )?;
        pooled.total_n += dataset.total_n;
        for entry in dataset.entries {
            match pooled.entries.iter_mut().find(|e| e.id == entry.id) {
                Some(existing) => {
                    existing.n_runs += entry.n_runs;
                    for (a, b) in existing.counts.iter_mut().zip(entry.counts.iter()) {
                        *a += b;
                    }
                }
                None => pooled.entries.push(entry),
            }
        }
        let surface = mle_grid(&pooled, menu, &guess, grid)?;
        let estimate = mle_refine(&pooled, menu, &guess, surface.argmax)?;
        guess = estimate;
        trace.push(AdaptiveRound {
            round,
            design,
            estimate,
        });
    }
    Ok(trace)
}

/// One row of the MSE-versus-N table.
#[derive(Debug, Clone, Serialize)]
pub struct MseRow {
    pub n: u64,
    /// Mean over trials of |theta_hat - theta_truth|^2.
    pub mse_mean: f64,
    /// Median over trials of the same squared error.
    pub mse_median: f64,
    /// Tr(F(theta_guess)^-1)/n for the supplied design.
    pub cr_reference: f64,
}

/// Monte-Carlo mean squared estimation error of the design as a function of
/// the number of runs, with the Cramer-Rao reference curve.
#[allow(clippy::too_many_arguments)]
pub fn mse_curve(
    menu: &ExperimentMenu,
    weights: &DesignWeights,
    truth: &ModelParams,
    theta_guess: &ModelParams,
    n_list: &[u64],
    trials: usize,
    seed: u64,
    grid: &GridSpec,
) -> Result<Vec<MseRow>> {
    assert!(trials >= 10, "mse_curve needs at least 10 trials");
    let fishers = menu_fisher_matrices(menu, theta_guess, crate::fisher::DEFAULT_FD_STEP)?;
    let combined = combined_fisher(&fishers, &weights.weights)?;
    let cr_at_one = combined.m.inverse()?.trace();
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let errors: Result<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let ds_seed = derive_seed(seed, (n << 20) ^ trial as u64);
                let dataset = sample_dataset(menu, weights, truth, n, ds_seed)?;
                let surface = mle_grid(&dataset, menu, theta_guess, grid)?;
                let est = mle_refine(&dataset, menu, theta_guess, surface.argmax)?;
                let df = est.f - truth.f;
                let dg = est.g - truth.g;
                Ok(df * df + dg * dg)
            })
            .collect();
        let mut errors = errors?;
        let mse_mean = errors.iter().sum::<f64>() / errors.len() as f64;
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mse_median = if errors.len() % 2 == 1 {
            errors[errors.len() / 2]
        } else {
            0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
        };
        rows.push(MseRow {
            n,
            mse_mean,
            mse_median,
            cr_reference: cr_at_one / n as f64,
        });
    }
    Ok(rows)
}

pub fn write_dataset(dataset: &OutcomeDataset, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<OutcomeDataset> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Surface file: CSV with header f,g,loglik.
pub fn write_surface_csv(surface: &LikelihoodSurface, path: &Path) -> Result<()> {
    let mut out = String::from("f,g,loglik\n");
    for (fi, &f) in surface.f_axis.iter().enumerate() {
        for (gi, &g) in surface.g_axis.iter().enumerate() {
            out.push_str(&format!("{f},{g},{}\n", surface.loglik[fi][gi]));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
