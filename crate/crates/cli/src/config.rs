//! Run configuration: a single JSON document plus flag overrides, hashed
//! into every output file for reproducibility.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use qest::estimate::GridSpec;
use qest::model::ModelParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub theta_guess: (f64, f64),
    pub theta_truth: (f64, f64),
    pub delta_omega: f64,
    pub times: Vec<f64>,
    /// full | suboptimal | table3 | path to a menu JSON file
    pub menu_source: String,
    pub n_samples: u64,
    pub seed: u64,
    pub grid: GridConfig,
    /// 0 = automatic
    pub threads: usize,
    pub output_dir: PathBuf,
    pub gate_error_prep: f64,
    pub gate_error_meas: f64,
    pub rounds: usize,
    pub trials: usize,
    pub n_list: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub nf: usize,
    pub g_min: f64,
    pub g_max: f64,
    pub ng: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            theta_guess: (1.0, 1.0),
            theta_truth: (1.1, 0.9),
            delta_omega: 1.0,
            times: vec![1.0],
            menu_source: "full".into(),
            n_samples: 200,
            seed: 1,
            grid: GridConfig {
                f_min: 0.0,
                f_max: 3.0,
                nf: 301,
                g_min: 0.0,
                g_max: std::f64::consts::PI,
                ng: 301,
            },
            threads: 0,
            output_dir: PathBuf::from("out"),
            gate_error_prep: 0.0,
            gate_error_meas: 0.0,
            rounds: 3,
            trials: 100,
            n_list: vec![50, 100, 200, 400, 800],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", p.display()))?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            bail!("times must be nonempty");
        }
        for v in [
            self.theta_guess.0,
            self.theta_guess.1,
            self.theta_truth.0,
            self.theta_truth.1,
            self.delta_omega,
        ] {
            if !v.is_finite() {
                bail!("non-finite parameter value in config");
            }
        }
        if !self.times.iter().all(|t| t.is_finite()) {
            bail!("non-finite probe time in config");
        }
        Ok(())
    }

    pub fn guess_params(&self) -> ModelParams {
        ModelParams::new(self.theta_guess.0, self.theta_guess.1, self.delta_omega)
    }

    pub fn truth_params(&self) -> ModelParams {
        ModelParams::new(self.theta_truth.0, self.theta_truth.1, self.delta_omega)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            f_min: self.grid.f_min,
            f_max: self.grid.f_max,
            nf: self.grid.nf,
            g_min: self.grid.g_min,
            g_max: self.grid.g_max,
            ng: self.grid.ng,
        }
    }

    /// FNV-1a over the canonical JSON serialization; stamped into every
    /// output so a run can be tied back to its exact configuration.
    /// Execution-environment fields (threads, output_dir) are normalized out:
    /// they cannot change any computed value.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.threads = 0;
        canon.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canon).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parse "a,b" into a pair.
pub fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("expected two comma-separated numbers, got {s:?}");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

/// Parse "a,b,c" into a list.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(Into::into))
        .collect()
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(Into::into))
        .collect()
}

/// Parse "fmin:fmax:nf,gmin:gmax:ng".
pub fn parse_grid(s: &str) -> Result<GridConfig> {
    let axes: Vec<&str> = s.split(',').collect();
    if axes.len() != 2 {
        bail!("expected two colon-separated axis specs joined by a comma");
    }
    let parse_axis = |a: &str| -> Result<(f64, f64, usize)> {
        let p: Vec<&str> = a.split(':').collect();
        if p.len() != 3 {
            bail!("axis spec must be min:max:count, got {a:?}");
        }
        Ok((p[0].parse()?, p[1].parse()?, p[2].parse()?))
    };
    let (f_min, f_max, nf) = parse_axis(axes[0])?;
    let (g_min, g_max, ng) = parse_axis(axes[1])?;
    Ok(GridConfig {
        f_min,
        f_max,
        nf,
        g_min,
        g_max,
        ng,
    })
}
