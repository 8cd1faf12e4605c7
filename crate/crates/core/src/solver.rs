//! Full NRG runs: iteration to convergence and evaluation of a parameter point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{discretization_correction, WilsonChain};
use crate::config::NrgConfig;
use crate::engine::{EngineSettings, IterationState};
use crate::error::{Error, Result};
use crate::observables::{entanglement_entropy, ObservableRecord, OperatorBlocks};
use crate::params::{map_to_kondo, renormalized_tunneling, KondoParams, SpinBosonPoint, OMEGA_C};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Final iteration `N_m`.
    pub n_m: usize,
    /// `omega_{N_m} < eta * Delta_r` was reached.
    pub scale_reached: bool,
    pub plateau_reached: bool,
    pub converged: bool,
    pub even_odd_averaged: bool,
    /// Same-parity drift of the raw observables over the last four iterations.
    pub drift_sx: f64,
    pub drift_sz: f64,
    /// Final raw `<O_x + O_x^dag>` and `<2 S_z>`.
    pub sx_raw: f64,
    pub sz_raw: f64,
    pub delta_r: f64,
    pub e0: f64,
    /// Raw `(sx, sz)` at every iteration.
    pub history: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: IterationState,
    pub ops: OperatorBlocks,
    pub report: RunReport,
}

/// `Delta_r` implied by a set of Kondo couplings, or 0 outside the supported sector.
pub fn kondo_scale(k: &KondoParams) -> f64 {
    if !(k.rho0_jpar > 0.0 && k.rho0_jperp > 0.0) {
        return 0.0;
    }
    let p = SpinBosonPoint {
        alpha: k.alpha(),
        epsilon: 0.0,
        delta_ratio: k.rho0_jperp,
        wc: OMEGA_C,
    };
    renormalized_tunneling(&p).map(|s| s.value).unwrap_or(0.0)
}

/// Couplings entering the chain Hamiltonian for nominal couplings `k`.
pub fn chain_couplings(k: &KondoParams, cfg: &NrgConfig) -> KondoParams {
    if cfg.discretization_correction {
        k.scaled_exchange(discretization_correction(cfg.lambda))
    } else {
        *k
    }
}

fn same_parity_drift(h: &[f64]) -> f64 {
    let n = h.len();
    if n < 4 {
        return f64::INFINITY;
    }
    (h[n - 1] - h[n - 3]).abs().max((h[n - 2] - h[n - 4]).abs())
}

struct Driver {
    chain: WilsonChain,
    state: IterationState,
    ops: OperatorBlocks,
    n_keep: usize,
    degeneracy_tol: f64,
    history: Vec<(f64, f64)>,
}

impl Driver {
    fn new(k: &KondoParams, cfg: &NrgConfig, settings: EngineSettings) -> Result<Self> {
        cfg.validate()?;
        let chain = WilsonChain::build(cfg.lambda, cfg.n_max)?;
        let state = IterationState::init_impurity_site(&chain_couplings(k, cfg), settings)?
            .truncate(cfg.n_keep, cfg.degeneracy_tol)?;
        let ops = OperatorBlocks::init(&state)?;
        let history = vec![ops.ground_expectations(&state)];
        Ok(Driver {
            chain,
            state,
            ops,
            n_keep: cfg.n_keep,
            degeneracy_tol: cfg.degeneracy_tol,
            history,
        })
    }

    fn step(&mut self) -> Result<()> {
        let next = self
            .state
            .add_site(&self.chain)?
            .truncate(self.n_keep, self.degeneracy_tol)?;
        self.ops = self.ops.propagate(&next)?;
        self.state = next;
        self.history.push(self.ops.ground_expectations(&self.state));
        Ok(())
    }

    fn finish(self, delta_r: f64, scale_reached: bool, plateau_tol: f64) -> RunResult {
        let xs: Vec<f64> = self.history.iter().map(|h| h.0).collect();
        let zs: Vec<f64> = self.history.iter().map(|h| h.1).collect();
        let drift_sx = same_parity_drift(&xs);
        let drift_sz = same_parity_drift(&zs);
        let plateau_reached = drift_sx < plateau_tol && drift_sz < plateau_tol;
        let (mut sx_raw, mut sz_raw) = *self.history.last().expect("non-empty history");
        let mut even_odd_averaged = false;
        if let [.., prev, last] = self.history[..] {
            if (last.0 - prev.0).abs() > plateau_tol || (last.1 - prev.1).abs() > plateau_tol {
                sx_raw = 0.5 * (last.0 + prev.0);
                sz_raw = 0.5 * (last.1 + prev.1);
                even_odd_averaged = true;
            }
        }
        let report = RunReport {
            n_m: self.state.n,
            scale_reached,
            plateau_reached,
            converged: scale_reached && plateau_reached,
            even_odd_averaged,
            drift_sx,
            drift_sz,
            sx_raw,
            sz_raw,
            delta_r,
            e0: self.state.e0_accumulated,
            history: self.history,
        };
        RunResult {
            state: self.state,
            ops: self.ops,
            report,
        }
    }
}

/// Iterates until `omega_N < eta * Delta_r` and the observables plateau, or `n_max`.
pub fn run(k: &KondoParams, cfg: &NrgConfig) -> Result<RunResult> {
    run_with(k, cfg, EngineSettings::new(cfg.lambda))
}

#[doc(hidden)]
pub fn run_with(k: &KondoParams, cfg: &NrgConfig, settings: EngineSettings) -> Result<RunResult> {
    let delta_r = kondo_scale(k);
    let mut d = Driver::new(k, cfg, settings)?;
    let target = cfg.eta * delta_r;
    loop {
        let scale_reached = d.state.energy_scale() < target;
        let drift_x = same_parity_drift(&d.history.iter().map(|h| h.0).collect::<Vec<_>>());
        let drift_z = same_parity_drift(&d.history.iter().map(|h| h.1).collect::<Vec<_>>());
        let plateau = drift_x < cfg.plateau_tol && drift_z < cfg.plateau_tol;
        if (scale_reached && plateau) || d.state.n >= cfg.n_max {
            return Ok(d.finish(delta_r, scale_reached, cfg.plateau_tol));
        }
        d.step()?;
    }
}

/// Runs exactly `iterations` steps regardless of the stopping rule.
pub fn run_fixed(k: &KondoParams, cfg: &NrgConfig, iterations: usize) -> Result<RunResult> {
    if iterations > cfg.n_max {
        return Err(Error::Config(format!(
            "{iterations} iterations exceed n_max = {}",
            cfg.n_max
        )));
    }
    let delta_r = kondo_scale(k);
    let mut d = Driver::new(k, cfg, EngineSettings::new(cfg.lambda))?;
    for _ in 0..iterations {
        d.step()?;
    }
    let scale_reached = d.state.energy_scale() < cfg.eta * delta_r;
    Ok(d.finish(delta_r, scale_reached, cfg.plateau_tol))
}

/// Reported `(sx, sz)`: the raw correlators with the sign flipped so that
/// `sx -> +1` as `alpha -> 0` and `sz -> +1` for `epsilon > 0`, `alpha -> 1`.
pub fn expectation_values(result: &RunResult, allow_unconverged: bool) -> Result<(f64, f64)> {
    if !result.report.converged && !allow_unconverged {
        return Err(Error::NotConverged {
            n_m: result.report.n_m,
        });
    }
    Ok((-result.report.sx_raw + 0.0, -result.report.sz_raw + 0.0))
}

/// Solves one spin-boson point and packages the observables.
pub fn run_point(p: &SpinBosonPoint, cfg: &NrgConfig) -> Result<ObservableRecord> {
    let k = map_to_kondo(p)?;
    let scale = renormalized_tunneling(p)?;
    let result = run(&k, cfg)?;
    let (sx, sz) = expectation_values(&result, true)?;
    let ent = entanglement_entropy(sx, sz)?;
    Ok(ObservableRecord {
        alpha: p.alpha,
        epsilon_over_delta: p.epsilon,
        delta_ratio: p.delta_ratio,
        sx,
        sy: 0.0,
        sz,
        norm: ent.norm,
        p_plus: ent.p_plus,
        p_minus: ent.p_minus,
        entropy: ent.entropy,
        delta_r: scale.value,
        n_m: result.report.n_m,
        converged: result.report.converged,
        even_odd_averaged: result.report.even_odd_averaged,
        lambda: cfg.lambda,
        n_keep: cfg.n_keep,
        error: None,
    })
}

/// Location of the entanglement maximum along `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaMax {
    pub alpha_m: f64,
    pub entropy_max: f64,
    /// Final bracket width.
    pub bracket: f64,
    /// `(alpha, entropy)` pairs visited, coarse grid first.
    pub evaluations: Vec<(f64, f64)>,
}

pub fn default_alpha_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Coarse grid followed by golden-section refinement to `|d alpha| <= 0.01`.
pub fn find_alpha_max(
    epsilon_over_delta: f64,
    delta_ratio: f64,
    cfg: &NrgConfig,
) -> Result<AlphaMax> {
    find_alpha_max_with(
        epsilon_over_delta,
        delta_ratio,
        cfg,
        &default_alpha_grid(),
        0.01,
    )
}

pub fn find_alpha_max_with(
    epsilon_over_delta: f64,
    delta_ratio: f64,
    cfg: &NrgConfig,
    grid: &[f64],
    tol: f64,
) -> Result<AlphaMax> {
    if !(epsilon_over_delta > 0.0) {
        return Err(Error::Domain(format!(
            "alpha_M search needs epsilon/Delta > 0, got {epsilon_over_delta}"
        )));
    }
    if grid.len() < 3 {
        return Err(Error::Config(
            "alpha grid needs at least three points".into(),
        ));
    }
    let entropy_at = |alpha: f64| -> Result<f64> {
        let p = SpinBosonPoint::new(alpha, epsilon_over_delta, delta_ratio)?;
        Ok(run_point(&p, cfg)?.entropy)
    };
    let coarse: Vec<f64> = grid
        .par_iter()
        .map(|&a| entropy_at(a))
        .collect::<Result<_>>()?;
    let mut evaluations: Vec<(f64, f64)> =
        grid.iter().copied().zip(coarse.iter().copied()).collect();
    let imax = coarse
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    if imax == 0 || imax == grid.len() - 1 {
        return Err(Error::NoInteriorMaximum(format!(
            "entropy peaks at grid end alpha = {}",
            grid[imax]
        )));
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[imax - 1], grid[imax + 1]);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = entropy_at(c)?;
    let mut fd = entropy_at(d)?;
    evaluations.push((c, fc));
    evaluations.push((d, fd));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = entropy_at(c)?;
            evaluations.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = entropy_at(d)?;
            evaluations.push((d, fd));
        }
    }
    let (alpha_m, entropy_max) = evaluations
        .iter()
        .copied()
        .filter(|(x, _)| *x >= a && *x <= b)
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or(((a + b) / 2.0, fc.max(fd)));
    if !(alpha_m > 0.0 && alpha_m < 1.0) {
        return Err(Error::NoInteriorMaximum(format!("alpha_M = {alpha_m}")));
    }
    Ok(AlphaMax {
        alpha_m,
        entropy_max,
        bracket: b - a,
        evaluations,
    })
}
