//! Local impurity observables and the qubit entanglement entropy.
//!
//! Two operators are tracked through the iterations: the spin-flip correlator
//! `O_x + O_x^dag` with `O_x = f+_{0 up} f_{0 dn} S^-`, whose ground-state value
//! is `<sigma_x>` of the spin-boson model, and the impurity `S_z`, with
//! `<sigma_z> = <2 S_z>`. Both are bosonic (even fermion parity) and conserve
//! charge and total `S_z`, so they stay sector-diagonal and need no sign
//! strings when a site is appended.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Deserializer, Serialize};

use crate::config::NrgConfig;
use crate::engine::{spin_flip_elements, IterationState, Sector};
use crate::error::{Error, Result};
use crate::params::SpinBosonPoint;

/// Tolerance (rescaled units) for treating excited states as part of the ground multiplet.
pub const GROUND_DEGENERACY_TOL: f64 = 1e-9;

/// Sector-diagonal operator restricted to kept states.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator {
    pub blocks: BTreeMap<Sector, DMatrix<f64>>,
    pub iteration: usize,
}

impl LocalOperator {
    /// Identity on the kept states of `state`.
    pub fn identity(state: &IterationState) -> Self {
        let blocks = state
            .blocks
            .iter()
            .filter(|(_, b)| b.kept > 0)
            .map(|(s, b)| (*s, DMatrix::identity(b.kept, b.kept)))
            .collect();
        LocalOperator {
            blocks,
            iteration: state.n,
        }
    }

    /// Largest `|A - A^T|` entry over all blocks.
    pub fn asymmetry(&self) -> f64 {
        self.blocks
            .values()
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Rotates the operator into the kept eigenbasis of the next iteration.
    pub fn propagate(&self, state: &IterationState) -> Result<Self> {
        if state.n != self.iteration + 1 {
            return Err(Error::DimensionMismatch(format!(
                "operator at iteration {} cannot follow state at iteration {}",
                self.iteration, state.n
            )));
        }
        let mut blocks = BTreeMap::new();
        for (sector, b) in &state.blocks {
            if b.kept == 0 {
                continue;
            }
            let v = b.vectors.columns(0, b.kept);
            let mut out = DMatrix::zeros(b.kept, b.kept);
            for c in &b.layout {
                let old = self.blocks.get(&c.old).ok_or_else(|| {
                    Error::DimensionMismatch(format!("no operator block for sector {:?}", c.old))
                })?;
                if old.nrows() != c.len || old.ncols() != c.len {
                    return Err(Error::DimensionMismatch(format!(
                        "operator block {:?} is {}x{}, basis slice has {} states",
                        c.old,
                        old.nrows(),
                        old.ncols(),
                        c.len
                    )));
                }
                let w = v.rows(c.offset, c.len);
                let ow = old * w;
                out.gemm_tr(1.0, &w, &ow, 1.0);
            }
            blocks.insert(*sector, out);
        }
        Ok(LocalOperator {
            blocks,
            iteration: state.n,
        })
    }

    /// Average of the diagonal elements over the given states.
    fn average(&self, states: &[(Sector, usize)]) -> f64 {
        let sum: f64 = states.iter().map(|(s, i)| self.blocks[s][(*i, *i)]).sum();
        sum / states.len() as f64
    }
}

fn rotate(p: &DMatrix<f64>, v: DMatrixView<f64>) -> DMatrix<f64> {
    v.transpose() * p * v
}

/// `O_x + O_x^dag` and impurity `S_z` in the current eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBlocks {
    pub ox: LocalOperator,
    pub oz: LocalOperator,
}

impl OperatorBlocks {
    /// Exact operator matrices on the impurity + site-0 space.
    pub fn init(state: &IterationState) -> Result<Self> {
        if state.n != 0 {
            return Err(Error::DimensionMismatch(format!(
                "operator initialization needs iteration 0, got {}",
                state.n
            )));
        }
        let mut ox = BTreeMap::new();
        let mut oz = BTreeMap::new();
        for (sector, b) in &state.blocks {
            if b.kept == 0 {
                continue;
            }
            let dim = b.dim();
            let mut px = DMatrix::zeros(dim, dim);
            for (i, j, v) in spin_flip_elements(&b.layout) {
                px[(i, j)] += v;
                px[(j, i)] += v;
            }
            let mut pz = DMatrix::zeros(dim, dim);
            for c in &b.layout {
                pz[(c.offset, c.offset)] = 0.5 * c.old.two_sz as f64;
            }
            let v = b.vectors.columns(0, b.kept);
            ox.insert(*sector, rotate(&px, v));
            oz.insert(*sector, rotate(&pz, v));
        }
        Ok(OperatorBlocks {
            ox: LocalOperator {
                blocks: ox,
                iteration: 0,
            },
            oz: LocalOperator {
                blocks: oz,
                iteration: 0,
            },
        })
    }

    pub fn propagate(&self, state: &IterationState) -> Result<Self> {
        Ok(OperatorBlocks {
            ox: self.ox.propagate(state)?,
            oz: self.oz.propagate(state)?,
        })
    }

    /// Raw ground-state values `(<O_x + O_x^dag>, <2 S_z>)`, averaged over
    /// the degenerate ground multiplet.
    pub fn ground_expectations(&self, state: &IterationState) -> (f64, f64) {
        let gs = state.ground_multiplet(GROUND_DEGENERACY_TOL);
        (self.ox.average(&gs), 2.0 * self.oz.average(&gs))
    }
}

/// Eigenvalues of the qubit reduced density matrix and its von Neumann entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entanglement {
    pub norm: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Entropy in bits.
    pub entropy: f64,
}

fn xlog2x(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.log2()
    }
}

/// Binary entropy of the qubit with Bloch vector `(sx, 0, sz)`.
pub fn entanglement_entropy(sx: f64, sz: f64) -> Result<Entanglement> {
    let raw = sx.hypot(sz);
    if !raw.is_finite() || raw > 1.0 + 1e-6 {
        return Err(Error::Nonphysical(raw));
    }
    let norm = raw.min(1.0);
    let p_plus = 0.5 * (1.0 + norm);
    let p_minus = 0.5 * (1.0 - norm);
    Ok(Entanglement {
        norm,
        p_plus,
        p_minus,
        entropy: 0.0 - xlog2x(p_plus) - xlog2x(p_minus),
    })
}

/// JSON has no NaN; failed rows serialize their outputs as `null` and read back as NaN.
fn float_or_nan<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Converged observables for one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub alpha: f64,
    pub epsilon_over_delta: f64,
    pub delta_ratio: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub sx: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub sy: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub sz: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub norm: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub p_plus: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub p_minus: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub entropy: f64,
    #[serde(deserialize_with = "float_or_nan")]
    pub delta_r: f64,
    pub n_m: usize,
    pub converged: bool,
    /// Even and odd iterations disagreed beyond the plateau tolerance and were averaged.
    pub even_odd_averaged: bool,
    pub lambda: f64,
    pub n_keep: usize,
    pub error: Option<String>,
}

impl ObservableRecord {
    /// Placeholder row for a point whose solve failed; outputs are NaN.
    pub fn failed(p: &SpinBosonPoint, cfg: &NrgConfig, message: String) -> Self {
        ObservableRecord {
            alpha: p.alpha,
            epsilon_over_delta: p.epsilon,
            delta_ratio: p.delta_ratio,
            sx: f64::NAN,
            sy: f64::NAN,
            sz: f64::NAN,
            norm: f64::NAN,
            p_plus: f64::NAN,
            p_minus: f64::NAN,
            entropy: f64::NAN,
            delta_r: f64::NAN,
            n_m: 0,
            converged: false,
            even_odd_averaged: false,
            lambda: cfg.lambda,
            n_keep: cfg.n_keep,
            error: Some(message),
        }
    }
}
