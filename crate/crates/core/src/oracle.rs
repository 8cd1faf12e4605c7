//! Brute-force exact diagonalization of the impurity plus a short Wilson
//! chain in the full Fock space, used to certify the iterative solver.
//!
//! Basis states are bit strings: bit 0 is the impurity spin (set = up), bit
//! `1 + 2 * site + spin` is the occupation of mode `(site, spin)`. Fermion
//! modes are ordered by site, then spin with up first; the impurity carries
//! no fermion number.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::chain::{energy_scale, WilsonChain};
use crate::engine::{EngineSettings, IterationState, Sector, DOWN, UP};
use crate::error::{Error, Result};
use crate::observables::{OperatorBlocks, GROUND_DEGENERACY_TOL};
use crate::params::KondoParams;

pub const MAX_SITES: usize = 5;

/// Agreement required between the untruncated solver and the oracle.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    pub sites: usize,
}

impl FockBasis {
    pub fn new(sites: usize) -> Result<Self> {
        if sites == 0 || sites > MAX_SITES {
            return Err(Error::OracleTooLarge {
                max: MAX_SITES,
                got: sites,
            });
        }
        Ok(FockBasis { sites })
    }

    pub fn dim(&self) -> usize {
        1 << (1 + 2 * self.sites)
    }

    fn bit(site: usize, spin: usize) -> u32 {
        1 << (1 + 2 * site + spin)
    }

    pub fn impurity_up(state: usize) -> bool {
        state & 1 == 1
    }

    pub fn occupied(state: usize, site: usize, spin: usize) -> bool {
        state as u32 & Self::bit(site, spin) != 0
    }

    pub fn electrons(state: usize) -> i32 {
        (state >> 1).count_ones() as i32
    }

    pub fn sector(&self, state: usize) -> Sector {
        let mut two_sz = if Self::impurity_up(state) { 1 } else { -1 };
        for site in 0..self.sites {
            two_sz += Self::occupied(state, site, UP) as i32;
            two_sz -= Self::occupied(state, site, DOWN) as i32;
        }
        Sector::new(Self::electrons(state) - self.sites as i32, two_sz)
    }

    /// Jordan-Wigner sign: parity of occupied modes preceding `(site, spin)`.
    fn string_sign(state: usize, site: usize, spin: usize) -> f64 {
        let below = (Self::bit(site, spin) - 1) & !1;
        if (state as u32 & below).count_ones() % 2 == 1 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn create(&self, site: usize, spin: usize, state: usize) -> Option<(usize, f64)> {
        if Self::occupied(state, site, spin) {
            return None;
        }
        let sign = Self::string_sign(state, site, spin);
        Some((state | Self::bit(site, spin) as usize, sign))
    }

    pub fn annihilate(&self, site: usize, spin: usize, state: usize) -> Option<(usize, f64)> {
        if !Self::occupied(state, site, spin) {
            return None;
        }
        let sign = Self::string_sign(state, site, spin);
        Some((state & !(Self::bit(site, spin) as usize), sign))
    }

    /// Dense matrix of `c+_{site,spin}`.
    pub fn creation_matrix(&self, site: usize, spin: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for s in 0..self.dim() {
            if let Some((t, sign)) = self.create(site, spin, s) {
                m[(t, s)] = sign;
            }
        }
        m
    }

    /// `f+_{0,up} f_{0,dn} S^- + h.c.`
    pub fn spin_flip_operator(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for s in (0..self.dim()).filter(|&s| Self::impurity_up(s)) {
            let Some((mid, s1)) = self.annihilate(0, DOWN, s) else {
                continue;
            };
            let Some((t, s2)) = self.create(0, UP, mid) else {
                continue;
            };
            let t = t & !1;
            m[(t, s)] += s1 * s2;
            m[(s, t)] += s1 * s2;
        }
        m
    }

    /// Diagonal of the impurity `S_z`.
    pub fn impurity_sz(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|s| if Self::impurity_up(s) { 0.5 } else { -0.5 })
            .collect()
    }

    /// Full Hamiltonian in `D0` units, impurity on site 0 and chain hoppings up to `sites - 1`.
    pub fn hamiltonian(&self, k: &KondoParams, chain: &WilsonChain) -> Result<DMatrix<f64>> {
        if chain.length + 1 < self.sites {
            return Err(Error::DimensionMismatch(format!(
                "chain of {} hoppings cannot hold {} sites",
                chain.length, self.sites
            )));
        }
        let dim = self.dim();
        let sz = self.impurity_sz();
        let mut h = 0.5 * k.jperp() * self.spin_flip_operator();
        for s in 0..dim {
            let band = Self::occupied(s, 0, UP) as i32 - Self::occupied(s, 0, DOWN) as i32;
            h[(s, s)] += k.field * sz[s] + 0.5 * k.jpar() * band as f64 * sz[s];
        }
        for n in 0..self.sites - 1 {
            for spin in [UP, DOWN] {
                for s in 0..dim {
                    let Some((mid, s1)) = self.annihilate(n, spin, s) else {
                        continue;
                    };
                    let Some((t, s2)) = self.create(n + 1, spin, mid) else {
                        continue;
                    };
                    h[(t, s)] += chain.hop[n] * s1 * s2;
                    h[(s, t)] += chain.hop[n] * s1 * s2;
                }
            }
        }
        Ok(h)
    }
}

/// Largest `|H_ij - H_ji|` and largest element connecting different sectors.
pub fn hamiltonian_defects(basis: &FockBasis, h: &DMatrix<f64>) -> (f64, f64) {
    let mut asym: f64 = 0.0;
    let mut cross: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
            if basis.sector(i) != basis.sector(j) {
                cross = cross.max(h[(i, j)].abs());
            }
        }
    }
    (asym, cross)
}

struct SectorSolution {
    states: Vec<usize>,
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Exact eigensystem, one dense solve per sector.
pub struct ExactSolution {
    pub basis: FockBasis,
    sectors: BTreeMap<Sector, SectorSolution>,
    ground_tol: f64,
}

/// Exact ground-state quantities and the full spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactGround {
    /// Ground energy in `D0` units.
    pub e0: f64,
    /// Raw `<O_x + O_x^dag>` averaged over the ground multiplet.
    pub sx_raw: f64,
    /// Raw `<2 S_z>` averaged over the ground multiplet.
    pub sz_raw: f64,
    pub degeneracy: usize,
    pub spectrum: Vec<f64>,
}

impl ExactSolution {
    pub fn solve(k: &KondoParams, chain: &WilsonChain, sites: usize) -> Result<Self> {
        let basis = FockBasis::new(sites)?;
        let h = basis.hamiltonian(k, chain)?;
        let mut groups: BTreeMap<Sector, Vec<usize>> = BTreeMap::new();
        for s in 0..basis.dim() {
            groups.entry(basis.sector(s)).or_default().push(s);
        }
        let mut sectors = BTreeMap::new();
        for (sector, states) in groups {
            let d = states.len();
            let block = DMatrix::from_fn(d, d, |i, j| h[(states[i], states[j])]);
            let eig = SymmetricEigen::try_new(block, f64::EPSILON, 1000 * d)
                .ok_or(Error::Eigensolver { sector, dim: d })?;
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
            sectors.insert(
                sector,
                SectorSolution {
                    states,
                    energies,
                    vectors,
                },
            );
        }
        // same relative tolerance the iterative solver applies to its rescaled levels
        let ground_tol = GROUND_DEGENERACY_TOL * energy_scale(chain.lambda, sites - 1);
        Ok(ExactSolution {
            basis,
            sectors,
            ground_tol,
        })
    }

    pub fn spectrum(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .sectors
            .values()
            .flat_map(|s| s.energies.iter().copied())
            .collect();
        all.sort_by(f64::total_cmp);
        all
    }

    fn ground_energy(&self) -> f64 {
        self.sectors
            .values()
            .map(|s| s.energies[0])
            .fold(f64::INFINITY, f64::min)
    }

    fn ground_states(&self) -> Vec<(Sector, usize)> {
        let e0 = self.ground_energy();
        let mut out = Vec::new();
        for (sector, s) in &self.sectors {
            for (i, &e) in s.energies.iter().enumerate() {
                if e - e0 <= self.ground_tol {
                    out.push((*sector, i));
                }
            }
        }
        out
    }

    /// Matrix of a sector-diagonal operator restricted to `sector`, in the eigenbasis.
    fn operator_block(&self, sector: Sector, op: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &self.sectors[&sector];
        let d = s.states.len();
        let restricted = DMatrix::from_fn(d, d, |i, j| op[(s.states[i], s.states[j])]);
        s.vectors.transpose() * restricted * &s.vectors
    }

    /// Per-sector `(trace, Frobenius norm)` of an operator; both are basis independent.
    pub fn operator_invariants(&self, op: &DMatrix<f64>) -> BTreeMap<Sector, (f64, f64)> {
        self.sectors
            .keys()
            .map(|&sector| {
                let b = self.operator_block(sector, op);
                (sector, (b.trace(), b.norm()))
            })
            .collect()
    }

    pub fn ground(&self) -> ExactGround {
        let gs = self.ground_states();
        let ox = self.basis.spin_flip_operator();
        let sz = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.basis.impurity_sz()));
        let average = |op: &DMatrix<f64>| {
            let mut total = 0.0;
            for &(sector, i) in &gs {
                total += self.operator_block(sector, op)[(i, i)];
            }
            total / gs.len() as f64
        };
        ExactGround {
            e0: self.ground_energy(),
            sx_raw: average(&ox),
            sz_raw: 2.0 * average(&sz),
            degeneracy: gs.len(),
            spectrum: self.spectrum(),
        }
    }
}

/// Exact ground energy and raw observables of the impurity plus `sites` chain sites.
pub fn exact_ground(k: &KondoParams, chain: &WilsonChain, sites: usize) -> Result<ExactGround> {
    Ok(ExactSolution::solve(k, chain, sites)?.ground())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellmannFeynman {
    /// `<O_x + O_x^dag>` at the central coupling.
    pub correlator: f64,
    /// `[E0(J + dj) - E0(J - dj)] / dj`.
    pub difference: f64,
    pub residual: f64,
    /// Ground degeneracy differs across the stencil; the residual is then unreliable.
    pub degeneracy_changed: bool,
}

/// Compares the spin-flip correlator with the central difference of `E0` in `J_perp`.
pub fn hellmann_feynman_check(
    k: &KondoParams,
    chain: &WilsonChain,
    sites: usize,
    dj: f64,
) -> Result<HellmannFeynman> {
    if !(dj > 0.0) {
        return Err(Error::Domain(format!(
            "coupling step must be positive, got {dj}"
        )));
    }
    let mid = exact_ground(k, chain, sites)?;
    let plus = exact_ground(&k.with_jperp(k.jperp() + dj), chain, sites)?;
    let minus = exact_ground(&k.with_jperp(k.jperp() - dj), chain, sites)?;
    let difference = (plus.e0 - minus.e0) / dj;
    Ok(HellmannFeynman {
        correlator: mid.sx_raw,
        difference,
        residual: (mid.sx_raw - difference).abs(),
        degeneracy_changed: plus.degeneracy != mid.degeneracy || minus.degeneracy != mid.degeneracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub sites: usize,
    pub n_keep: usize,
    /// Some iteration discarded states.
    pub truncated: bool,
    /// Largest deviation over the compared eigenvalues (all of them when untruncated).
    pub max_eigenvalue_dev: f64,
    pub sx_dev: f64,
    pub sz_dev: f64,
    /// Largest deviation of per-sector operator traces and norms.
    pub operator_dev: f64,
    pub ground_sector: Sector,
    pub passed: bool,
}

/// Runs the iterative solver on the same finite chain and measures its deviation from the oracle.
pub fn compare_with_nrg(
    k: &KondoParams,
    chain: &WilsonChain,
    sites: usize,
    n_keep: usize,
    settings: EngineSettings,
) -> Result<OracleComparison> {
    let exact = ExactSolution::solve(k, chain, sites)?;
    let ground = exact.ground();

    let tol = 1e-10;
    let mut state = IterationState::init_impurity_site(k, settings)?;
    let mut truncated = false;
    let finish = |s: IterationState, truncated: &mut bool| -> Result<IterationState> {
        let s = s.truncate(n_keep, tol)?;
        *truncated |= s.total_kept() < s.total_dim();
        Ok(s)
    };
    state = finish(state, &mut truncated)?;
    let mut ops = OperatorBlocks::init(&state)?;
    for _ in 1..sites {
        let next = finish(state.add_site(chain)?, &mut truncated)?;
        ops = ops.propagate(&next)?;
        state = next;
    }

    // the final spectrum is complete even when the last truncation discards states
    let nrg = state.absolute_spectrum();
    let ed = &ground.spectrum;
    let count = nrg.len().min(ed.len());
    let mut max_eigenvalue_dev = nrg[..count]
        .iter()
        .zip(&ed[..count])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if nrg.len() != ed.len() {
        max_eigenvalue_dev = max_eigenvalue_dev.max(f64::INFINITY);
    }

    let (sx, sz) = ops.ground_expectations(&state);

    let ox = exact.basis.spin_flip_operator();
    let szm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(exact.basis.impurity_sz()));
    let mut operator_dev: f64 = 0.0;
    for (op, blocks) in [(&ox, &ops.ox.blocks), (&szm, &ops.oz.blocks)] {
        for (sector, (tr, norm)) in exact.operator_invariants(op) {
            let (t, n) = blocks
                .get(&sector)
                .map_or((0.0, 0.0), |b| (b.trace(), b.norm()));
            operator_dev = operator_dev.max((t - tr).abs()).max((n - norm).abs());
        }
    }

    let sx_dev = (sx - ground.sx_raw).abs();
    let sz_dev = (sz - ground.sz_raw).abs();
    let passed = !truncated
        && max_eigenvalue_dev <= ORACLE_TOL
        && sx_dev <= ORACLE_TOL
        && sz_dev <= ORACLE_TOL
        && operator_dev <= ORACLE_TOL;
    Ok(OracleComparison {
        sites,
        n_keep,
        truncated,
        max_eigenvalue_dev,
        sx_dev,
        sz_dev,
        operator_dev,
        ground_sector: state.ground_sector,
        passed,
    })
}
