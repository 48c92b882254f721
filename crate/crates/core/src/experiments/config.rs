use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::design::{make_d, DKind};
use super::io::read_matrix_csv;
use crate::augment::DEFAULT_ETA;
use crate::error::{Result, SkfError};
use crate::numerics::Matrix;
use crate::path::{make_lambda_grid, LambdaGrid, StatMode};

/// Which rows the cross-validation refit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvRefit {
    /// Refit and score on the held-out fold.
    Validation,
    /// Refit on the training part, score on the held-out fold.
    #[default]
    Training,
}

/// Monte Carlo simulation settings. Grids are `[start, end, step]` in
/// `log10` units: `nu_grid` ascends from `start`, `lambda_grid` descends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub c: f64,
    pub sigma: f64,
    #[serde(rename = "D_kind")]
    pub d_kind: DKind,
    pub d_file: Option<PathBuf>,
    pub q: f64,
    pub nu_grid: [f64; 3],
    pub lambda_grid: [f64; 3],
    pub replicates: usize,
    pub seed: u64,
    pub eta: f64,
    pub mode: StatMode,
    pub lambda_hat: Option<f64>,
    pub plus: bool,
    /// Select `nu` per replicate by cross-validation over `nu_grid`.
    pub cv: bool,
    pub folds: usize,
    pub cv_refit: CvRefit,
    /// Also run the classical knockoff on the reduced problem when
    /// `rank(D) = m <= p`.
    pub baseline: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 350,
            p: 100,
            k: 20,
            amplitude: 1.0,
            c: 0.5,
            sigma: 1.0,
            d_kind: DKind::D1,
            d_file: None,
            q: 0.2,
            nu_grid: [-1.0, 3.0, 0.2],
            lambda_grid: [0.0, -6.0, 0.01],
            replicates: 20,
            seed: 1,
            eta: DEFAULT_ETA,
            mode: StatMode::PathOrder,
            lambda_hat: None,
            plus: false,
            cv: false,
            folds: 5,
            cv_refit: CvRefit::Training,
            baseline: false,
        }
    }
}

/// `10^(start + k step)` for `k = 0, 1, ...` up to `end`.
pub fn log_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && end.is_finite() && step.is_finite()) {
        return Err(SkfError::invalid("grid bounds must be finite"));
    }
    if !(step > 0.0) || end < start {
        return Err(SkfError::invalid(format!(
            "grid needs start <= end and step > 0, got ({start}, {end}, {step})"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| {
            // snap exponents so that e.g. 10^1 is exact
            let e = ((start + k as f64 * step) * 1e9).round() / 1e9;
            10f64.powf(e)
        })
        .collect())
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| SkfError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SkfError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        // a relative D file is taken relative to the config file
        if let (Some(file), Some(dir)) = (&config.d_file, path.parent()) {
            if file.is_relative() {
                config.d_file = Some(dir.join(file));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SkfError::Config(msg));
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        if self.k > self.p {
            return bad(format!("k = {} exceeds p = {}", self.k, self.p));
        }
        if !(self.amplitude.is_finite() && self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("A must be finite and sigma finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.c) {
            return bad(format!("c must lie in [0, 1), got {}", self.c));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must lie in (0, 1), got {}", self.q));
        }
        if !(self.eta > 0.0 && self.eta < 2.0) {
            return bad(format!("eta must lie in (0, 2), got {}", self.eta));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if (self.d_kind == DKind::File) != self.d_file.is_some() {
            return bad("d_file is required exactly when D_kind = \"file\"".into());
        }
        self.nu_values().map_err(|e| SkfError::Config(format!("nu_grid: {e}")))?;
        let grid = self.lambda_grid().map_err(|e| SkfError::Config(format!("lambda_grid: {e}")))?;
        if let Some(lam) = self.lambda_hat {
            if grid.position(lam).is_none() {
                return bad(format!("lambda_hat = {lam} is not on the lambda grid"));
            }
        }
        Ok(())
    }

    pub fn nu_values(&self) -> Result<Vec<f64>> {
        let [start, end, step] = self.nu_grid;
        log_grid(start, end, step)
    }

    pub fn lambda_grid(&self) -> Result<LambdaGrid> {
        let [top, bottom, step] = self.lambda_grid;
        make_lambda_grid(top, bottom, step)
    }

    pub fn d_matrix(&self) -> Result<Matrix> {
        let d = match (&self.d_kind, &self.d_file) {
            (DKind::File, Some(path)) => read_matrix_csv(path)?,
            (DKind::File, None) => return Err(SkfError::Config("d_file is missing".into())),
            (kind, _) => make_d(*kind, self.p)?,
        };
        if d.ncols() != self.p {
            return Err(SkfError::Config(format!(
                "D has {} columns but p = {}",
                d.ncols(),
                self.p
            )));
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.nu_values().unwrap().len(), 21);
        assert_eq!(c.lambda_grid().unwrap().len(), 601);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn keys_follow_field_names() {
        let c = SimConfig::from_toml_str("A = 2.0\nD_kind = \"D3\"\nnu_grid = [-1.0, 3.0, 0.4]\n").unwrap();
        assert_eq!(c.amplitude, 2.0);
        assert_eq!(c.d_kind, DKind::D3);
        assert_eq!(c.nu_values().unwrap().len(), 11);
        assert!(SimConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(SimConfig::from_toml_str("q = 1.5\n").is_err());
        assert!(SimConfig::from_toml_str("D_kind = \"file\"\n").is_err());
        assert!(SimConfig::from_toml_str("mode = \"magnitude\"\nlambda_hat = 0.5\n").is_err());
    }

    #[test]
    fn log_grid_hits_decades() {
        let g = log_grid(-1.0, 3.0, 0.2).unwrap();
        assert_eq!(g[0], 0.1);
        assert_eq!(g[10], 10.0);
        assert_eq!(g[20], 1000.0);
        assert!(log_grid(1.0, 0.0, 0.1).is_err());
    }
}
