use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver settings shared by single points and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrgConfig {
    pub lambda: f64,
    pub n_keep: usize,
    pub n_max: usize,
    /// Stop once `omega_N < eta * Delta_r`.
    pub eta: f64,
    pub plateau_tol: f64,
    pub degeneracy_tol: f64,
    /// Scale the exchange couplings by `A_Lambda` to undo the density-of-states
    /// reduction of the discretized band.
    pub discretization_correction: bool,
}

impl Default for NrgConfig {
    fn default() -> Self {
        NrgConfig {
            lambda: 2.0,
            n_keep: 300,
            n_max: 300,
            eta: 1e-2,
            plateau_tol: 1e-6,
            degeneracy_tol: 1e-10,
            discretization_correction: true,
        }
    }
}

impl NrgConfig {
    /// Production settings: `Lambda = 1.5`, 1200 kept states.
    pub fn paper_fidelity() -> Self {
        NrgConfig {
            lambda: 1.5,
            n_keep: 1200,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must exceed 1, got {}", self.lambda));
        }
        if self.n_keep < 16 {
            return bad(format!("n_keep must be at least 16, got {}", self.n_keep));
        }
        if self.n_max == 0 {
            return bad("n_max must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.plateau_tol > 0.0) {
            return bad(format!(
                "plateau_tol must be positive, got {}",
                self.plateau_tol
            ));
        }
        if !(self.degeneracy_tol > 0.0) {
            return bad(format!(
                "degeneracy_tol must be positive, got {}",
                self.degeneracy_tol
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("cannot parse value {v:?} for {key}")))
        }
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "n_keep" => self.n_keep = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "plateau_tol" => self.plateau_tol = parse(key, value)?,
            "degeneracy_tol" => self.degeneracy_tol = parse(key, value)?,
            "discretization_correction" => self.discretization_correction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a plain `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}
