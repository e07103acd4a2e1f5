//! Parameter-landscape studies: estimability (the optimal design recomputed
//! at every grid point) and robustness (one fixed design evaluated across
//! the plane), with summary statistics over the usable cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::design::{optimize_a_design, DesignWeights, SolverOptions};
use crate::error::{Error, Result};
use crate::estimate::GridSpec;
use crate::fisher::{combined_fisher, menu_fisher_matrices, FisherMatrix, DEFAULT_FD_STEP};
use crate::menu::ExperimentMenu;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellFlag {
    Ok,
    Singular,
    SolverNotConverged,
}

/// Diagonal entries of the inverse Fisher matrix over a parameter grid.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub f_axis: Vec<f64>,
    pub g_axis: Vec<f64>,
    /// inv11[fi][gi]; meaningful only where the flag is Ok.
    pub inv11: Vec<Vec<f64>>,
    pub inv22: Vec<Vec<f64>>,
    pub flags: Vec<Vec<CellFlag>>,
}

/// Per-channel summary over the Ok cells.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LandscapeStats {
    pub inv11: ChannelStats,
    pub inv22: ChannelStats,
}

fn cell_inverse_diagonals(fisher: &FisherMatrix) -> Option<(f64, f64)> {
    if fisher.m.min_eigval() <= 1e-12 {
        return None;
    }
    let inv = fisher.m.inverse().ok()?;
    Some((inv.get(0, 0), inv.get(1, 1)))
}

fn assemble(
    grid: &GridSpec,
    cells: Vec<(f64, f64, CellFlag)>,
) -> LandscapeGrid {
    let f_axis = grid.f_axis();
    let g_axis = grid.g_axis();
    let ng = g_axis.len();
    let mut inv11 = vec![vec![f64::NAN; ng]; f_axis.len()];
    let mut inv22 = vec![vec![f64::NAN; ng]; f_axis.len()];
    let mut flags = vec![vec![CellFlag::Singular; ng]; f_axis.len()];
    for (k, (a, b, flag)) in cells.into_iter().enumerate() {
        let (fi, gi) = (k / ng, k % ng);
        inv11[fi][gi] = a;
        inv22[fi][gi] = b;
        flags[fi][gi] = flag;
    }
    LandscapeGrid {
        f_axis,
        g_axis,
        inv11,
        inv22,
        flags,
    }
}

/// Best-achievable estimation variance landscape: at every grid point the
/// A-optimal design over the menu is recomputed and the diagonals of its
/// inverse Fisher matrix recorded. Per-cell failures are flagged, never
/// fatal.
pub fn estimability_landscape(
    menu: &ExperimentMenu,
    grid: &GridSpec,
    solver_opts: &SolverOptions,
) -> LandscapeGrid {
    let f_axis = grid.f_axis();
    let g_axis = grid.g_axis();
    let points: Vec<(f64, f64)> = f_axis
        .iter()
        .flat_map(|&f| g_axis.iter().map(move |&g| (f, g)))
        .collect();
    let cells: Vec<(f64, f64, CellFlag)> = points
        .par_iter()
        .map(|&(f, g)| {
            let theta = ModelParams::new(f, g, 1.0);
            let fishers = match menu_fisher_matrices(menu, &theta, DEFAULT_FD_STEP) {
                Ok(v) => v,
                Err(_) => return (f64::NAN, f64::NAN, CellFlag::Singular),
            };
            match optimize_a_design(&fishers, solver_opts) {
                Ok(result) => {
                    let flag = if result.converged {
                        CellFlag::Ok
                    } else {
                        CellFlag::SolverNotConverged
                    };
                    match cell_inverse_diagonals(&result.fisher) {
                        Some((a, b)) => (a, b, flag),
                        None => (f64::NAN, f64::NAN, CellFlag::Singular),
                    }
                }
                Err(_) => (f64::NAN, f64::NAN, CellFlag::Singular),
            }
        })
        .collect();
    assemble(grid, cells)
}

/// Robustness of one fixed design: its combined Fisher matrix is evaluated
/// at every grid point and inverted. Support experiments only; zero-weight
/// menu entries are skipped.
pub fn robustness_landscape(
    menu: &ExperimentMenu,
    fixed_weights: &DesignWeights,
    grid: &GridSpec,
) -> Result<LandscapeGrid> {
    if fixed_weights.weights.len() != menu.len() {
        return Err(Error::Contract(
            "robustness_landscape: weights do not match the menu".into(),
        ));
    }
    let support = fixed_weights.support();
    let mut sub = menu.clone();
    sub.experiments = support
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let mut e = menu.experiments[id].clone();
            e.id = k;
            e
        })
        .collect();
    let sub_weights: Vec<f64> = {
        let total: f64 = support.iter().map(|&id| fixed_weights.weights[id]).sum();
        support
            .iter()
            .map(|&id| fixed_weights.weights[id] / total)
            .collect()
    };
    let f_axis = grid.f_axis();
    let g_axis = grid.g_axis();
    let points: Vec<(f64, f64)> = f_axis
        .iter()
        .flat_map(|&f| g_axis.iter().map(move |&g| (f, g)))
        .collect();
    let cells: Vec<(f64, f64, CellFlag)> = points
        .par_iter()
        .map(|&(f, g)| {
            let theta = ModelParams::new(f, g, 1.0);
            let combined = menu_fisher_matrices(&sub, &theta, DEFAULT_FD_STEP)
                .and_then(|fishers| combined_fisher(&fishers, &sub_weights));
            match combined.ok().as_ref().and_then(cell_inverse_diagonals) {
                Some((a, b)) => (a, b, CellFlag::Ok),
                None => (f64::NAN, f64::NAN, CellFlag::Singular),
            }
        })
        .collect();
    Ok(assemble(grid, cells))
}

/// Mean/min/max of each inverse-Fisher diagonal over the Ok cells.
pub fn landscape_stats(grid: &LandscapeGrid) -> Result<LandscapeStats> {
    let mut v1 = Vec::new();
    let mut v2 = Vec::new();
    for (fi, row) in grid.flags.iter().enumerate() {
        for (gi, flag) in row.iter().enumerate() {
            if *flag == CellFlag::Ok {
                v1.push(grid.inv11[fi][gi]);
                v2.push(grid.inv22[fi][gi]);
            }
        }
    }
    if v1.is_empty() {
        return Err(Error::EmptyLandscape);
    }
    let stats = |v: &[f64]| ChannelStats {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(LandscapeStats {
        inv11: stats(&v1),
        inv22: stats(&v2),
    })
}

/// Landscape file: CSV with header f,g,inv11,inv22,flag.
pub fn write_landscape_csv(grid: &LandscapeGrid, path: &Path) -> Result<()> {
    let mut out = String::from("f,g,inv11,inv22,flag\n");
    for (fi, &f) in grid.f_axis.iter().enumerate() {
        for (gi, &g) in grid.g_axis.iter().enumerate() {
            let flag = match grid.flags[fi][gi] {
                CellFlag::Ok => "ok",
                CellFlag::Singular => "singular",
                CellFlag::SolverNotConverged => "solver-not-converged",
            };
            out.push_str(&format!(
                "{f},{g},{},{},{flag}\n",
                grid.inv11[fi][gi], grid.inv22[fi][gi]
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
