//! Self-verification suites: oracle equivalence, Hellmann-Feynman identity and
//! structural invariants, run on small chains where exact answers exist.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::WilsonChain;
use crate::engine::{EngineSettings, IterationState, DOWN, UP};
use crate::error::Result;
use crate::observables::OperatorBlocks;
use crate::oracle::{
    compare_with_nrg, exact_ground, hamiltonian_defects, hellmann_feynman_check, FockBasis,
    MAX_SITES,
};
use crate::params::{map_to_kondo, KondoParams, SpinBosonPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub lambda: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Coupling sets exercised by the oracle suite; the last three carry a field.
pub fn coupling_sets() -> Vec<KondoParams> {
    let mut sets = vec![
        KondoParams::new(0.04, 0.3, 0.0),
        KondoParams::new(0.1, 0.8, 0.0),
        KondoParams::new(0.02, 1.5, 0.0),
        KondoParams::new(0.3, 0.1, 0.0),
        KondoParams::new(0.05, 0.4, 0.01),
        KondoParams::new(0.03, 0.6, 0.2),
        KondoParams::new(0.08, 0.2, 0.05),
    ];
    let p = SpinBosonPoint::new(0.5, 0.1, 0.04).expect("valid point");
    sets.push(map_to_kondo(&p).expect("mappable point"));
    sets
}

fn suite(name: &str, lambda: f64, passed: bool, detail: String) -> SuiteResult {
    SuiteResult {
        name: name.into(),
        lambda,
        passed,
        detail,
    }
}

/// Untruncated solver against exact diagonalization for 1..=4 added sites.
pub fn oracle_suite(settings: EngineSettings) -> Result<SuiteResult> {
    let chain = WilsonChain::build(settings.lambda, MAX_SITES)?;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut cases = 0;
    for k in coupling_sets() {
        for sites in 2..=MAX_SITES {
            let r = compare_with_nrg(&k, &chain, sites, usize::MAX, settings)?;
            worst = worst
                .max(r.max_eigenvalue_dev)
                .max(r.sx_dev)
                .max(r.sz_dev)
                .max(r.operator_dev);
            failures += (!r.passed) as usize;
            cases += 1;
        }
    }
    Ok(suite(
        "oracle-equivalence",
        settings.lambda,
        failures == 0,
        format!("{cases} cases, {failures} failed, max deviation {worst:.3e}"),
    ))
}

/// Single-site analytic ground energy and Hellmann-Feynman residuals.
pub fn hellmann_feynman_suite(lambda: f64) -> Result<SuiteResult> {
    let chain = WilsonChain::build(lambda, MAX_SITES)?;
    let (jperp, jpar) = (0.3, 0.8);
    let k = KondoParams::from_exchange(jperp, jpar, 0.0);
    let g = exact_ground(&k, &chain, 1)?;
    let anchor = (g.e0 - (-jpar / 4.0 - jperp / 2.0)).abs();
    let single = hellmann_feynman_check(&k, &chain, 1, 1e-4 * k.jperp())?;
    let mut worst_chain: f64 = 0.0;
    let mut flagged = 0;
    for k in coupling_sets() {
        let r = hellmann_feynman_check(&k, &chain, 4, 1e-4 * k.jperp())?;
        if r.degeneracy_changed {
            flagged += 1;
        } else {
            worst_chain = worst_chain.max(r.residual);
        }
    }
    let passed = anchor <= 1e-12 && single.residual < 1e-8 && worst_chain < 1e-6;
    Ok(suite(
        "hellmann-feynman",
        lambda,
        passed,
        format!(
            "anchor {anchor:.2e}, single-site residual {:.2e}, chain residual {worst_chain:.2e} ({flagged} flagged)",
            single.residual
        ),
    ))
}

/// Hermiticity, block structure, anticommutation and operator propagation checks.
pub fn invariant_suite(settings: EngineSettings) -> Result<SuiteResult> {
    let lambda = settings.lambda;
    let chain = WilsonChain::build(lambda, 60)?;
    let mut notes = Vec::new();
    let mut passed = true;

    let basis = FockBasis::new(4)?;
    let mut worst_h: f64 = 0.0;
    for k in coupling_sets() {
        let h = basis.hamiltonian(&k, &chain)?;
        let (asym, cross) = hamiltonian_defects(&basis, &h);
        worst_h = worst_h.max(asym).max(cross);
    }
    passed &= worst_h < 1e-12;
    notes.push(format!("hamiltonian defects {worst_h:.1e}"));

    let basis = FockBasis::new(2)?;
    let modes = [(0, UP), (0, DOWN), (1, UP), (1, DOWN)];
    let ops: Vec<DMatrix<f64>> = modes
        .iter()
        .map(|&(s, p)| basis.creation_matrix(s, p))
        .collect();
    let mut worst_ac: f64 = 0.0;
    for (i, a) in ops.iter().enumerate() {
        for (j, b) in ops.iter().enumerate() {
            let mut ab = a * b.transpose() + b.transpose() * a;
            if i == j {
                ab -= DMatrix::identity(basis.dim(), basis.dim());
            }
            worst_ac = worst_ac.max(ab.amax()).max((a * b + b * a).amax());
        }
    }
    passed &= worst_ac < 1e-14;
    notes.push(format!("anticommutators {worst_ac:.1e}"));

    // truncated propagation keeps operators symmetric
    let k = KondoParams::new(0.04, 0.4, 0.01);
    let mut state = IterationState::init_impurity_site(&k, settings)?.truncate(200, 1e-10)?;
    let mut ops = OperatorBlocks::init(&state)?;
    for _ in 0..50 {
        state = state.add_site(&chain)?.truncate(200, 1e-10)?;
        ops = ops.propagate(&state)?;
    }
    let asym = ops.ox.asymmetry().max(ops.oz.asymmetry());
    passed &= asym < 1e-9;
    notes.push(format!("operator asymmetry after 50 steps {asym:.1e}"));

    Ok(suite("invariants", lambda, passed, notes.join(", ")))
}

/// Runs every suite for each discretization parameter.
pub fn verify(lambdas: &[f64], template: EngineSettings) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    for &lambda in lambdas {
        let settings = EngineSettings { lambda, ..template };
        suites.push(oracle_suite(settings)?);
        suites.push(hellmann_feynman_suite(lambda)?);
        suites.push(invariant_suite(settings)?);
    }
    Ok(VerifyReport { suites })
}
