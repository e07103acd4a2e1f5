//! A-optimal experiment design over the menu simplex: minimize the trace of
//! the inverse combined Fisher matrix, certify first-order optimality via the
//! general equivalence condition, and certify Q >= F^-1 via the block-PSD
//! Schur test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherMatrix;
use crate::linalg::SymMatrix;

/// Probability vector over menu ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignWeights {
    pub weights: Vec<f64>,
    /// Weights above this threshold count as support.
    pub support_tol: f64,
}

impl DesignWeights {
    pub fn new(weights: Vec<f64>) -> Self {
        Self {
            weights,
            support_tol: DEFAULT_SUPPORT_TOL,
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Ids with weight above the support threshold.
    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > self.support_tol)
            .map(|(i, _)| i)
            .collect()
    }
}

pub const DEFAULT_SUPPORT_TOL: f64 = 1e-6;

/// Options for the A-optimal solver. The defaults converge on every menu in
/// the test corpus; everything is deterministic for fixed options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Exponent of the multiplicative update.
    pub gamma: f64,
    pub max_iters: usize,
    /// Convergence threshold on the equivalence gap, relative to the
    /// objective.
    pub gap_tol_rel: f64,
    /// A vertex-exchange step replaces the multiplicative update every this
    /// many iterations.
    pub exchange_every: usize,
    /// Weights below this are zeroed between iterations.
    pub prune_tol: f64,
    pub support_tol: f64,
    /// Optional seeded multi-start: (seed, number of extra Dirichlet starts).
    pub multi_start: Option<(u64, usize)>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_iters: 5000,
            gap_tol_rel: 1e-5,
            exchange_every: 10,
            prune_tol: 1e-15,
            support_tol: DEFAULT_SUPPORT_TOL,
            multi_start: None,
        }
    }
}

/// Support entry after merging experiments with identical Fisher matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedSupportPoint {
    /// Lowest menu id in the merged group.
    pub representative: usize,
    /// All ids in the group carrying support weight.
    pub ids: Vec<usize>,
    /// Total weight of the group.
    pub weight: f64,
}

/// Output of the A-optimal solve.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub weights: DesignWeights,
    /// Combined Fisher matrix at the returned design.
    pub fisher: FisherMatrix,
    /// Tr(F^-1) at the returned design.
    pub objective: f64,
    pub equivalence_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Support after merging experiments whose Fisher matrices agree within
    /// 1e-9, ordered by ascending representative id.
    pub merged_support: Vec<MergedSupportPoint>,
    /// Objective after each iteration; non-increasing by construction.
    pub objective_history: Vec<f64>,
}

struct Workspace<'a> {
    fishers: &'a [FisherMatrix],
    p: usize,
}

impl<'a> Workspace<'a> {
    fn combined(&self, weights: &[f64]) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.p);
        for (f, &w) in self.fishers.iter().zip(weights.iter()) {
            if w > 0.0 {
                m.add_scaled(&f.m, w);
            }
        }
        m
    }

    /// Multiplicative re-equilibration restricted to the current support;
    /// cheap because zero weights stay zero.
    fn equilibrate(&self, weights: &mut [f64], iters: usize) {
        for _ in 0..iters {
            let f = self.combined(weights);
            if f.min_eigval() <= 1e-12 {
                return;
            }
            let finv = match f.inverse() {
                Ok(m) => m,
                Err(_) => return,
            };
            let obj = finv.trace();
            let mut finv2 = SymMatrix::zeros(self.p);
            for i in 0..self.p {
                for j in i..self.p {
                    let mut v = 0.0;
                    for k in 0..self.p {
                        v += finv.get(i, k) * finv.get(k, j);
                    }
                    finv2.set_sym(i, j, v);
                }
            }
            for (w, fe) in weights.iter_mut().zip(self.fishers.iter()) {
                if *w > 0.0 {
                    *w *= finv2.trace_product(&fe.m) / obj;
                }
            }
            normalize(weights);
        }
    }

    fn objective(&self, weights: &[f64]) -> Option<f64> {
        let m = self.combined(weights);
        if m.min_eigval() <= 1e-12 {
            return None;
        }
        m.inverse().ok().map(|inv| inv.trace())
    }

    /// Directional derivatives d_E = Tr(F^-1 I_E F^-1) for all experiments,
    /// plus the objective Tr(F^-1).
    fn directional(&self, weights: &[f64]) -> Result<(Vec<f64>, f64)> {
        let f = self.combined(weights);
        if f.min_eigval() <= 1e-12 {
            return Err(Error::NotEstimable(
                "combined Fisher matrix is singular at the current design".into(),
            ));
        }
        let finv = f.inverse()?;
        let finv2 = {
            // F^-1 F^-1 stays symmetric
            let mut m = SymMatrix::zeros(self.p);
            for i in 0..self.p {
                for j in i..self.p {
                    let mut v = 0.0;
                    for k in 0..self.p {
                        v += finv.get(i, k) * finv.get(k, j);
                    }
                    m.set_sym(i, j, v);
                }
            }
            m
        };
        let d: Vec<f64> = self
            .fishers
            .par_iter()
            .map(|fe| finv2.trace_product(&fe.m))
            .collect();
        Ok((d, finv.trace()))
    }
}

fn normalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Largest directional derivative with index-ordered tie-breaking; identical
/// under any parallel split.
fn argmax_indexed(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Golden-section line search for the step toward a vertex; deterministic
/// fixed iteration count.
fn line_search_vertex(ws: &Workspace, weights: &[f64], vertex: usize) -> (f64, f64) {
    let eval = |alpha: f64| -> f64 {
        let mut trial: Vec<f64> = weights.iter().map(|w| w * (1.0 - alpha)).collect();
        trial[vertex] += alpha;
        ws.objective(&trial).unwrap_or(f64::INFINITY)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 0.999);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..48 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    let alpha = 0.5 * (a + b);
    (alpha, eval(alpha))
}

fn solve_from(
    ws: &Workspace,
    mut weights: Vec<f64>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64, f64, usize, bool, Vec<f64>)> {
    let mut objective = ws
        .objective(&weights)
        .ok_or_else(|| Error::NotEstimable("initial design has singular information".into()))?;
    let mut history = Vec::with_capacity(opts.max_iters.min(4096));
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iters {
        iterations = iter;
        let (d, obj) = ws.directional(&weights)?;
        objective = obj;
        let max_d = d[argmax_indexed(&d)];
        gap = max_d - obj;
        if gap <= opts.gap_tol_rel * obj {
            converged = true;
            history.push(objective);
            break;
        }
        let vertex_step = iter % opts.exchange_every == 0;
        let mut accepted = false;
        if !vertex_step {
            // multiplicative update with backtracking on the exponent so the
            // objective never increases
            let mut gamma = opts.gamma;
            for _ in 0..8 {
                let mut trial: Vec<f64> = weights
                    .iter()
                    .zip(d.iter())
                    .map(|(w, de)| if *w > 0.0 { w * (de / obj).powf(gamma) } else { 0.0 })
                    .collect();
                normalize(&mut trial);
                if let Some(new_obj) = ws.objective(&trial) {
                    if new_obj <= obj * (1.0 + 1e-14) {
                        weights = trial;
                        objective = new_obj.min(obj);
                        accepted = true;
                        break;
                    }
                }
                gamma *= 0.5;
            }
        }
        if !accepted {
            let vertex = argmax_indexed(&d);
            let (alpha, new_obj) = line_search_vertex(ws, &weights, vertex);
            if new_obj <= obj {
                for w in weights.iter_mut() {
                    *w *= 1.0 - alpha;
                }
                weights[vertex] += alpha;
                objective = new_obj;
            }
        }
        for w in weights.iter_mut() {
            if *w < opts.prune_tol {
                *w = 0.0;
            }
        }
        normalize(&mut weights);
        if let Some(&prev) = history.last() {
            debug_assert!(objective <= prev * (1.0 + 1e-12), "objective increased");
        }
        history.push(objective);
    }
    Ok((weights, objective, gap, iterations, converged, history))
}

/// Minimize Tr(sum_E lambda_E I_E)^-1 over the probability simplex.
///
/// The iteration combines a multiplicative weight update (fixed point of the
/// equivalence condition) with periodic vertex-exchange line searches toward
/// the experiment of largest directional derivative, and stops when the
/// equivalence gap drops below `gap_tol_rel` times the objective.
pub fn optimize_a_design(fishers: &[FisherMatrix], opts: &SolverOptions) -> Result<DesignResult> {
    if fishers.is_empty() {
        return Err(Error::Contract("optimize_a_design: empty menu".into()));
    }
    let p = fishers[0].dim();
    let ws = Workspace { fishers, p };
    // experiments with no information never enter the design
    let active: Vec<usize> = (0..fishers.len())
        .filter(|&i| fishers[i].m.trace() > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::NotEstimable("every experiment is uninformative".into()));
    }
    // if the uniform mixture over active experiments is singular, no weights
    // can repair it (null spaces of PSD summands only shrink by mixing)
    let mut start = vec![0.0; fishers.len()];
    for &i in &active {
        start[i] = 1.0 / active.len() as f64;
    }
    if ws.combined(&start).min_eigval() <= 1e-12 {
        return Err(Error::NotEstimable(
            "no weighting of the menu yields an invertible Fisher matrix".into(),
        ));
    }

    let mut best = solve_from(&ws, start, opts)?;
    if let Some((seed, extra)) = opts.multi_start {
        for k in 0..extra {
            let mut rng = crate::rng::CounterRng::new(seed, k as u64);
            let mut w = vec![0.0; fishers.len()];
            for &i in &active {
                w[i] = -rng.next_f64().max(1e-12).ln();
            }
            normalize(&mut w);
            let cand = solve_from(&ws, w, opts)?;
            if cand.1 < best.1 {
                best = cand;
            }
        }
    }
    let (mut weights, mut objective, mut gap, iterations, converged, history) = best;

    // Support cleanup: the multiplicative dynamics leave near-zero stragglers
    // when the gap tolerance is reached first. Greedily drop the smallest
    // support weight while the objective does not worsen, re-equilibrate the
    // survivors, and keep the cleaned design only if it still certifies.
    if converged {
        let mut current = weights.clone();
        let mut cur_obj = objective;
        loop {
            let support: Vec<usize> = current
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > opts.support_tol)
                .map(|(i, _)| i)
                .collect();
            if support.len() <= 1 {
                break;
            }
            let &smallest = support
                .iter()
                .min_by(|&&a, &&b| current[a].partial_cmp(&current[b]).unwrap().then(a.cmp(&b)))
                .unwrap();
            let mut trial = current.clone();
            trial[smallest] = 0.0;
            for w in trial.iter_mut() {
                if *w <= opts.support_tol {
                    *w = 0.0;
                }
            }
            normalize(&mut trial);
            ws.equilibrate(&mut trial, 60);
            match ws.objective(&trial) {
                Some(new_obj) if new_obj <= cur_obj * (1.0 + 1e-12) => {
                    current = trial;
                    cur_obj = new_obj;
                }
                _ => break,
            }
        }
        if let Ok((d, obj)) = ws.directional(&current) {
            let g = d[argmax_indexed(&d)] - obj;
            if g <= opts.gap_tol_rel * obj && obj <= objective * (1.0 + 1e-12) {
                weights = current;
                objective = obj;
                gap = g;
            }
        }
    }

    let support_ids: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > opts.support_tol)
        .map(|(i, _)| i)
        .collect();
    let mut merged: Vec<MergedSupportPoint> = Vec::new();
    for &id in &support_ids {
        let mut placed = false;
        for g in merged.iter_mut() {
            if fishers[g.representative].m.max_abs_diff(&fishers[id].m) < 1e-9 {
                g.ids.push(id);
                g.weight += weights[id];
                placed = true;
                break;
            }
        }
        if !placed {
            merged.push(MergedSupportPoint {
                representative: id,
                ids: vec![id],
                weight: weights[id],
            });
        }
    }

    let fisher = FisherMatrix {
        m: ws.combined(&weights),
        theta_at: fishers[0].theta_at,
        singular_outcomes: vec![],
    };
    Ok(DesignResult {
        weights: DesignWeights {
            weights,
            support_tol: opts.support_tol,
        },
        fisher,
        objective,
        equivalence_gap: gap,
        iterations,
        converged,
        merged_support: merged,
        objective_history: history,
    })
}

/// First-order optimality certificate: max_E Tr(F^-1 I_E F^-1) - Tr(F^-1).
/// Nonpositive (within tolerance) exactly at A-optimal weights.
pub fn equivalence_gap(fishers: &[FisherMatrix], weights: &[f64]) -> Result<f64> {
    if fishers.len() != weights.len() {
        return Err(Error::Contract("equivalence_gap: length mismatch".into()));
    }
    let ws = Workspace {
        fishers,
        p: fishers[0].dim(),
    };
    let (d, obj) = ws.directional(weights)?;
    // linearity self-check: the weighted average of the directional
    // derivatives equals the objective
    let avg: f64 = d.iter().zip(weights.iter()).map(|(de, w)| de * w).sum();
    debug_assert!((avg - obj).abs() <= 1e-8 * obj.abs().max(1.0));
    Ok(d[argmax_indexed(&d)] - obj)
}

/// True iff the block matrix [[Q, I], [I, F]] is positive semidefinite
/// (minimum eigenvalue >= -1e-9), equivalently Q >= F^-1.
pub fn schur_certificate(q: &SymMatrix, f: &FisherMatrix) -> bool {
    let p = f.dim();
    if q.dim() != p {
        return false;
    }
    let mut block = SymMatrix::zeros(2 * p);
    for i in 0..p {
        for j in 0..p {
            block.set_sym(i, j, q.get(i, j));
        }
        block.set_sym(i, p + i, 1.0);
        for j in 0..p {
            block.set_sym(p + i, p + j, f.m.get(i, j));
        }
    }
    block.min_eigval() >= -1e-9
}

/// Tr(M^-1) for a small symmetric matrix given as its packed upper triangle,
/// by the adjugate; +inf when not positive definite.
fn trace_inverse_packed(p: usize, a: &[f64]) -> f64 {
    match p {
        1 => {
            if a[0] > 0.0 {
                1.0 / a[0]
            } else {
                f64::INFINITY
            }
        }
        2 => {
            // [[a0, a1], [a1, a2]]
            let det = a[0] * a[2] - a[1] * a[1];
            if det > 0.0 && a[0] > 0.0 {
                (a[0] + a[2]) / det
            } else {
                f64::INFINITY
            }
        }
        3 => {
            // [[a0, a1, a2], [a1, a3, a4], [a2, a4, a5]]
            let c00 = a[3] * a[5] - a[4] * a[4];
            let c11 = a[0] * a[5] - a[2] * a[2];
            let c22 = a[0] * a[3] - a[1] * a[1];
            let det = a[0] * c00 - a[1] * (a[1] * a[5] - a[4] * a[2])
                + a[2] * (a[1] * a[4] - a[3] * a[2]);
            if det > 0.0 && a[0] > 0.0 && c22 > 0.0 {
                (c00 + c11 + c22) / det
            } else {
                f64::INFINITY
            }
        }
        _ => unreachable!("brute force supports p <= 3"),
    }
}

/// Exhaustive search over the simplex grid with spacing `grid_step`;
/// the independent oracle for the iterative solver. Near-ties at machine
/// noise keep the lexicographically lowest weight vector.
pub fn brute_force_design(fishers: &[FisherMatrix], grid_step: f64) -> Result<DesignWeights> {
    if fishers.is_empty() || fishers.len() > 6 {
        return Err(Error::Contract(
            "brute_force_design supports 1 to 6 experiments".into(),
        ));
    }
    if grid_step > 0.02 {
        return Err(Error::Contract("grid_step must be <= 0.02".into()));
    }
    let k = fishers.len();
    let m = (1.0 / grid_step).round() as usize;
    let p = fishers[0].dim();
    assert!(p <= 3, "brute force supports at most 3 free parameters");
    let tri = p * (p + 1) / 2;
    // packed upper triangles, scaled by the grid step so weights are counts
    let packed: Vec<Vec<f64>> = fishers
        .iter()
        .map(|f| {
            let mut v = Vec::with_capacity(tri);
            for i in 0..p {
                for j in i..p {
                    v.push(f.m.get(i, j) * grid_step);
                }
            }
            v
        })
        .collect();

    // depth-first enumeration of compositions of m into k parts in
    // lexicographic order, maintaining the weighted sum incrementally
    let mut counts = vec![0usize; k];
    let mut acc = vec![vec![0.0; tri]; k + 1];
    let mut best_obj = f64::INFINITY;
    let mut best_counts: Vec<usize> = Vec::new();
    fn descend(
        level: usize,
        remaining: usize,
        k: usize,
        tri: usize,
        packed: &[Vec<f64>],
        counts: &mut [usize],
        acc: &mut [Vec<f64>],
        best_obj: &mut f64,
        best_counts: &mut Vec<usize>,
        p: usize,
    ) {
        if level == k - 1 {
            counts[level] = remaining;
            let (head, tail) = acc.split_at_mut(level + 1);
            let src = &head[level];
            let dst = &mut tail[0];
            for i in 0..tri {
                dst[i] = src[i] + remaining as f64 * packed[level][i];
            }
            let obj = trace_inverse_packed(p, dst);
            if obj < *best_obj * (1.0 - 1e-12) {
                *best_obj = obj;
                best_counts.clear();
                best_counts.extend_from_slice(counts);
            }
            return;
        }
        for c in 0..=remaining {
            counts[level] = c;
            let (head, tail) = acc.split_at_mut(level + 1);
            let src = &head[level];
            let dst = &mut tail[0];
            for i in 0..tri {
                dst[i] = src[i] + c as f64 * packed[level][i];
            }
            descend(
                level + 1,
                remaining - c,
                k,
                tri,
                packed,
                counts,
                acc,
                best_obj,
                best_counts,
                p,
            );
        }
    }
    descend(
        0,
        m,
        k,
        tri,
        &packed,
        &mut counts,
        &mut acc,
        &mut best_obj,
        &mut best_counts,
        p,
    );
    if !best_obj.is_finite() {
        return Err(Error::NotEstimable(
            "no grid point yields an invertible Fisher matrix".into(),
        ));
    }
    let weights: Vec<f64> = best_counts
        .iter()
        .map(|&c| c as f64 * grid_step)
        .collect();
    Ok(DesignWeights::new(weights))
}
