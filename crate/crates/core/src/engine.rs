//! Iterative diagonalization of the Wilson-chain Kondo Hamiltonian.
//!
//! The Hilbert space is resolved into sectors of conserved total charge `q`
//! (relative to half filling of the chain) and twice the total spin
//! projection `two_sz` (impurity plus band). Each iteration adds one chain
//! site, assembles the rescaled Hamiltonian
//! `H_{N+1} = sqrt(Lambda) H_N + xi_N (f+_{N+1} f_N + h.c.)` in the product
//! basis `|r>_N (x) |s>_{N+1}` of kept states and new-site Fock states, and
//! diagonalizes every sector block with a dense symmetric eigensolver.
//!
//! Fermion ordering: old sites precede the new site, so a new-site operator
//! acting on `|r, s>` picks up `(-1)^{n_r}`. Every state of a sector has the
//! same electron number, hence the sign is a per-block scalar.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{energy_scale, WilsonChain};
use crate::error::{Error, Result};
use crate::params::KondoParams;

/// Conserved quantum numbers labeling a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sector {
    /// Total charge relative to half filling of the chain sites.
    pub q: i32,
    /// Twice the total spin projection, impurity included.
    pub two_sz: i32,
}

impl Sector {
    pub fn new(q: i32, two_sz: i32) -> Self {
        Sector { q, two_sz }
    }

    /// Image under the global spin flip.
    pub fn mirror(self) -> Self {
        Sector {
            q: self.q,
            two_sz: -self.two_sz,
        }
    }

    fn shifted(self, dq: i32, dsz: i32) -> Self {
        Sector {
            q: self.q + dq,
            two_sz: self.two_sz + dsz,
        }
    }
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;

/// Single-site Fock states: empty, up, down, `f+_up f+_dn |0>`.
pub(crate) const SITE_Q: [i32; 4] = [-1, 0, 0, 1];
pub(crate) const SITE_SZ: [i32; 4] = [0, 1, -1, 0];

/// `f+_spin |s>` on one site as `(target, sign)`.
pub(crate) fn site_create(spin: usize, s: usize) -> Option<(usize, f64)> {
    match (spin, s) {
        (UP, 0) => Some((1, 1.0)),
        (UP, 2) => Some((3, 1.0)),
        (DOWN, 0) => Some((2, 1.0)),
        (DOWN, 1) => Some((3, -1.0)),
        _ => None,
    }
}

/// `f_spin |s>` on one site as `(target, sign)`.
pub(crate) fn site_annihilate(spin: usize, s: usize) -> Option<(usize, f64)> {
    match (spin, s) {
        (UP, 1) => Some((0, 1.0)),
        (UP, 3) => Some((2, 1.0)),
        (DOWN, 2) => Some((0, 1.0)),
        (DOWN, 3) => Some((1, -1.0)),
        _ => None,
    }
}

/// Global spin flip `f_up <-> f_dn` on one site; `f+_up f+_dn -> f+_dn f+_up` costs a sign.
pub(crate) fn site_flip(s: usize) -> (usize, f64) {
    match s {
        1 => (2, 1.0),
        2 => (1, 1.0),
        3 => (3, -1.0),
        _ => (0, 1.0),
    }
}

fn creation_shift(spin: usize) -> (i32, i32) {
    if spin == UP {
        (1, 1)
    } else {
        (1, -1)
    }
}

/// One `(new-site state, old sector)` slice of a product-basis block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Component {
    pub site: usize,
    pub old: Sector,
    pub offset: usize,
    pub len: usize,
}

fn find_component(layout: &[Component], site: usize, old: Sector) -> Option<&Component> {
    layout.iter().find(|c| c.site == site && c.old == old)
}

#[derive(Debug, Clone)]
pub struct SectorBlock {
    /// Ascending eigenvalues in rescaled units, shifted so the global ground state is 0.
    pub energies: Vec<f64>,
    /// Columns are eigenvectors expressed in the product basis.
    pub vectors: DMatrix<f64>,
    pub kept: usize,
    pub(crate) layout: Vec<Component>,
}

impl SectorBlock {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }
}

/// Fermionic sign handling; `Ignore` exists only to check that tests notice a broken rule.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SignRule {
    #[default]
    Parity,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub lambda: f64,
    /// At zero field, build negative-`two_sz` sectors as exact spin-flip images.
    pub use_spin_flip: bool,
    #[doc(hidden)]
    pub sign_rule: SignRule,
}

impl EngineSettings {
    pub fn new(lambda: f64) -> Self {
        EngineSettings {
            lambda,
            use_spin_flip: true,
            sign_rule: SignRule::Parity,
        }
    }

    fn parity_sign(&self, electrons: i32) -> f64 {
        match self.sign_rule {
            SignRule::Parity if electrons.rem_euclid(2) == 1 => -1.0,
            _ => 1.0,
        }
    }
}

type Creators = [BTreeMap<Sector, DMatrix<f64>>; 2];

/// Representation of the global spin flip on self-mirror (`two_sz = 0`) sectors.
///
/// Sectors with `two_sz < 0` are defined as flip images of their partners, so
/// the flip is the identity between them and needs no storage.
#[derive(Debug, Clone, Default)]
struct SpinFlip {
    /// Flip matrices of the previous iteration, kept x kept.
    parent: BTreeMap<Sector, DMatrix<f64>>,
    /// Flip matrices of this iteration, filled in by `truncate`.
    current: BTreeMap<Sector, DMatrix<f64>>,
}

impl SpinFlip {
    fn apply_parent(&self, old: Sector, rows: DMatrixView<f64>) -> DMatrix<f64> {
        if old.two_sz == 0 {
            &self.parent[&old] * rows
        } else {
            rows.into_owned()
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationState {
    /// Iteration index `N`; the chain holds sites `0..=N`.
    pub n: usize,
    pub blocks: BTreeMap<Sector, SectorBlock>,
    /// Ground energy of `H_N` in `D0` units.
    pub e0_accumulated: f64,
    pub ground_sector: Sector,
    pub settings: EngineSettings,
    /// Set once `truncate` has fixed the kept basis.
    creators: Option<Creators>,
    spin_flip: Option<SpinFlip>,
}

fn diagonalize(sector: Sector, h: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = h.nrows();
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 1000 * dim.max(1))
        .ok_or(Error::Eigensolver { sector, dim })?;
    if eig.eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::Eigensolver { sector, dim });
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((energies, vectors))
}

/// Groups `(site, old sector, len)` triples into new sectors with offsets.
fn build_layouts(old: &[(Sector, usize)]) -> BTreeMap<Sector, Vec<Component>> {
    let mut layouts: BTreeMap<Sector, Vec<Component>> = BTreeMap::new();
    for &(a, len) in old {
        if len == 0 {
            continue;
        }
        for site in 0..4 {
            let target = a.shifted(SITE_Q[site], SITE_SZ[site]);
            let comps = layouts.entry(target).or_default();
            let offset = comps.last().map_or(0, |c: &Component| c.offset + c.len);
            comps.push(Component {
                site,
                old: a,
                offset,
                len,
            });
        }
    }
    layouts
}

fn layout_dim(layout: &[Component]) -> usize {
    layout.last().map_or(0, |c| c.offset + c.len)
}

impl IterationState {
    /// Number of chain sites `N + 1`.
    pub fn n_sites(&self) -> usize {
        self.n + 1
    }

    pub fn is_finalized(&self) -> bool {
        self.creators.is_some()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.values().map(SectorBlock::dim).sum()
    }

    pub fn total_kept(&self) -> usize {
        self.blocks.values().map(|b| b.kept).sum()
    }

    /// Characteristic energy `omega_N` of this iteration.
    pub fn energy_scale(&self) -> f64 {
        energy_scale(self.settings.lambda, self.n)
    }

    /// All eigenvalues of `H_N` in `D0` units, ascending.
    pub fn absolute_spectrum(&self) -> Vec<f64> {
        let scale = self.energy_scale();
        let mut out: Vec<f64> = self
            .blocks
            .values()
            .flat_map(|b| b.energies.iter().map(|e| scale * e + self.e0_accumulated))
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Lowest `count` rescaled eigenvalues across all sectors.
    pub fn lowest_levels(&self, count: usize) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .blocks
            .values()
            .flat_map(|b| b.energies.iter().copied())
            .collect();
        all.sort_by(f64::total_cmp);
        all.truncate(count);
        all
    }

    /// Ground multiplet as `(sector, index)` pairs within `tol` of the ground energy.
    pub fn ground_multiplet(&self, tol: f64) -> Vec<(Sector, usize)> {
        let mut out = Vec::new();
        for (s, b) in &self.blocks {
            for (i, &e) in b.energies.iter().enumerate().take(b.kept.max(1)) {
                if e <= tol {
                    out.push((*s, i));
                }
            }
        }
        out
    }

    /// Whether negative-`two_sz` sectors are exact spin-flip images.
    pub fn uses_spin_flip(&self) -> bool {
        self.spin_flip.is_some()
    }

    /// Spin-flip matrix on the kept states of a `two_sz = 0` sector.
    pub fn flip_matrix(&self, sector: Sector) -> Option<&DMatrix<f64>> {
        self.spin_flip.as_ref()?.current.get(&sector)
    }

    fn from_blocks(
        n: usize,
        mut blocks: BTreeMap<Sector, SectorBlock>,
        e0_prev: f64,
        settings: EngineSettings,
        spin_flip: Option<SpinFlip>,
    ) -> Self {
        let (ground_sector, eg) = blocks
            .iter()
            .filter_map(|(s, b)| b.energies.first().map(|&e| (*s, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one non-empty sector");
        for b in blocks.values_mut() {
            for e in &mut b.energies {
                *e -= eg;
            }
        }
        IterationState {
            n,
            blocks,
            e0_accumulated: e0_prev + energy_scale(settings.lambda, n) * eg,
            ground_sector,
            settings,
            creators: None,
            spin_flip,
        }
    }

    fn diagonalize_layouts(
        mut layouts: BTreeMap<Sector, Vec<Component>>,
        spin_flip: Option<&SpinFlip>,
        build: impl Fn(Sector, &[Component]) -> DMatrix<f64> + Sync,
    ) -> Result<BTreeMap<Sector, SectorBlock>> {
        let mirrored: BTreeMap<Sector, Vec<Component>> = match spin_flip {
            Some(_) => {
                let neg: Vec<Sector> = layouts.keys().filter(|s| s.two_sz < 0).copied().collect();
                neg.into_iter()
                    .map(|s| (s, layouts.remove(&s).expect("key present")))
                    .collect()
            }
            None => BTreeMap::new(),
        };
        let items: Vec<(Sector, Vec<Component>)> = layouts.into_iter().collect();
        let mut blocks: BTreeMap<Sector, SectorBlock> = items
            .into_par_iter()
            .map(|(sector, layout)| {
                let h = build(sector, &layout);
                let (energies, vectors) = diagonalize(sector, h)?;
                let kept = energies.len();
                Ok((
                    sector,
                    SectorBlock {
                        energies,
                        vectors,
                        kept,
                        layout,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        if let Some(flip) = spin_flip {
            for (sector, layout) in mirrored {
                let src = blocks.get(&sector.mirror()).ok_or_else(|| {
                    Error::DimensionMismatch(format!("no spin-flip partner for {sector:?}"))
                })?;
                let block = mirror_block(src, layout, flip);
                blocks.insert(sector, block);
            }
        }
        Ok(blocks)
    }

    /// Builds and diagonalizes `H_0`: impurity spin coupled to chain site 0.
    pub fn init_impurity_site(k: &KondoParams, settings: EngineSettings) -> Result<Self> {
        let jperp = k.jperp();
        let jpar = k.jpar();
        let field = k.field;
        // H_0 / omega_0
        let rescale = 1.0 / energy_scale(settings.lambda, 0);
        let imp = [(Sector::new(0, -1), 1), (Sector::new(0, 1), 1)];
        let layouts = build_layouts(&imp);
        let spin_flip = (settings.use_spin_flip && field == 0.0).then(SpinFlip::default);

        let blocks = Self::diagonalize_layouts(layouts, spin_flip.as_ref(), |_, layout| {
            let dim = layout_dim(layout);
            let mut h = DMatrix::zeros(dim, dim);
            for c in layout {
                let imp_sz = 0.5 * c.old.two_sz as f64;
                let band_sz = SITE_SZ[c.site] as f64;
                h[(c.offset, c.offset)] = field * imp_sz + 0.5 * jpar * band_sz * imp_sz;
            }
            for (i, j, v) in spin_flip_elements(layout) {
                h[(i, j)] += 0.5 * jperp * v;
                h[(j, i)] += 0.5 * jperp * v;
            }
            h * rescale
        })?;
        Ok(Self::from_blocks(0, blocks, 0.0, settings, spin_flip))
    }

    /// Adds chain site `N + 1` and diagonalizes every sector of `H_{N+1}`.
    ///
    /// The state must have been through `truncate`, which fixes the kept basis.
    pub fn add_site(&self, chain: &WilsonChain) -> Result<Self> {
        let creators = self
            .creators
            .as_ref()
            .ok_or_else(|| Error::Config("state must be truncated before adding a site".into()))?;
        if self.n >= chain.length {
            return Err(Error::Config(format!(
                "chain of length {} cannot extend iteration {}",
                chain.length, self.n
            )));
        }
        let hop = chain.rescaled_hop(self.n);
        let grow = self.settings.lambda.sqrt();
        let old_sites = self.n_sites() as i32;
        let settings = self.settings;

        let kept: Vec<(Sector, usize)> = self.blocks.iter().map(|(s, b)| (*s, b.kept)).collect();
        let layouts = build_layouts(&kept);
        let spin_flip = self.spin_flip.as_ref().map(|f| SpinFlip {
            parent: f.current.clone(),
            current: BTreeMap::new(),
        });

        let blocks = Self::diagonalize_layouts(layouts, spin_flip.as_ref(), |_, layout| {
            let dim = layout_dim(layout);
            let mut h = DMatrix::zeros(dim, dim);
            for c in layout {
                let old = &self.blocks[&c.old];
                for i in 0..c.len {
                    h[(c.offset + i, c.offset + i)] = grow * old.energies[i];
                }
            }
            // f+_{N+1,s} f_{N,s} + h.c.; rows (s, a), cols (s', b), b = a + shift(spin)
            for c2 in layout {
                for spin in [UP, DOWN] {
                    let Some((site, sign)) = site_create(spin, c2.site) else {
                        continue;
                    };
                    let (dq, dsz) = creation_shift(spin);
                    let a = c2.old.shifted(-dq, -dsz);
                    let Some(c1) = find_component(layout, site, a) else {
                        continue;
                    };
                    let Some(fdag) = creators[spin].get(&a) else {
                        continue;
                    };
                    let coef = hop * sign * settings.parity_sign(a.q + old_sites);
                    // fdag: kept(b) x kept(a)
                    for i in 0..c1.len {
                        for j in 0..c2.len {
                            let v = coef * fdag[(j, i)];
                            h[(c1.offset + i, c2.offset + j)] += v;
                            h[(c2.offset + j, c1.offset + i)] += v;
                        }
                    }
                }
            }
            h
        })?;
        Ok(Self::from_blocks(
            self.n + 1,
            blocks,
            self.e0_accumulated,
            settings,
            spin_flip,
        ))
    }

    /// Keeps the globally lowest `n_keep` states, extending the cut through
    /// any multiplet whose relative gap is below `degeneracy_tol`.
    pub fn truncate(mut self, n_keep: usize, degeneracy_tol: f64) -> Result<Self> {
        if n_keep < 16 {
            return Err(Error::Config(format!(
                "n_keep must be at least 16, got {n_keep}"
            )));
        }
        let mut all: Vec<(f64, Sector, usize)> = self
            .blocks
            .iter()
            .flat_map(|(s, b)| b.energies.iter().enumerate().map(|(i, &e)| (e, *s, i)))
            .collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut keep = all.len().min(n_keep);
        while keep > 0 && keep < all.len() {
            let (prev, next) = (all[keep - 1].0, all[keep].0);
            if next - prev <= degeneracy_tol * next.abs().max(1.0) {
                keep += 1;
            } else {
                break;
            }
        }
        for b in self.blocks.values_mut() {
            b.kept = 0;
        }
        for &(_, s, _) in &all[..keep] {
            self.blocks.get_mut(&s).expect("sector present").kept += 1;
        }
        self.creators = Some(self.compute_creators());
        if let Some(mut flip) = self.spin_flip.take() {
            flip.current = self
                .blocks
                .iter()
                .filter(|(s, b)| s.two_sz == 0 && b.kept > 0)
                .map(|(s, b)| (*s, flip_representation(b, &flip)))
                .collect();
            self.spin_flip = Some(flip);
        }
        Ok(self)
    }

    /// Matrix elements of `f+_{N,spin}` between kept states, keyed by source sector.
    fn compute_creators(&self) -> Creators {
        let old_sites = self.n as i32;
        let mut out: Creators = [BTreeMap::new(), BTreeMap::new()];
        for spin in [UP, DOWN] {
            let (dq, dsz) = creation_shift(spin);
            for (&sa, ba) in &self.blocks {
                let sb = sa.shifted(dq, dsz);
                let Some(bb) = self.blocks.get(&sb) else {
                    continue;
                };
                if ba.kept == 0 || bb.kept == 0 {
                    continue;
                }
                let va = ba.vectors.columns(0, ba.kept);
                let vb = bb.vectors.columns(0, bb.kept);
                let mut m = DMatrix::zeros(bb.kept, ba.kept);
                for ca in &ba.layout {
                    let Some((site, sign)) = site_create(spin, ca.site) else {
                        continue;
                    };
                    let cb = find_component(&bb.layout, site, ca.old)
                        .expect("target component exists for every kept old sector");
                    let coef = sign * self.settings.parity_sign(ca.old.q + old_sites);
                    let rows_b = vb.rows(cb.offset, cb.len);
                    let rows_a = va.rows(ca.offset, ca.len);
                    m.gemm_tr(coef, &rows_b, &rows_a, 1.0);
                }
                out[spin].insert(sa, m);
            }
        }
        out
    }
}

/// Builds the block of sector `-m` as the spin-flip image of sector `m`:
/// `P |w> = sum_{r,s} U_{(r,s),w} sign(s) (P |r>) |flip s>`.
fn mirror_block(src: &SectorBlock, layout: Vec<Component>, flip: &SpinFlip) -> SectorBlock {
    let dim = src.dim();
    let mut vectors = DMatrix::zeros(dim, dim);
    for c in &src.layout {
        let (fs, sign) = site_flip(c.site);
        let target = find_component(&layout, fs, c.old.mirror())
            .expect("mirror layout has every flipped component");
        let image = flip.apply_parent(c.old, src.vectors.rows(c.offset, c.len)) * sign;
        vectors
            .rows_mut(target.offset, target.len)
            .copy_from(&image);
    }
    SectorBlock {
        energies: src.energies.clone(),
        vectors,
        kept: src.kept,
        layout,
    }
}

/// `<w'|P|w>` on the kept states of a self-mirror sector.
fn flip_representation(b: &SectorBlock, flip: &SpinFlip) -> DMatrix<f64> {
    let v = b.vectors.columns(0, b.kept);
    let mut out = DMatrix::zeros(b.kept, b.kept);
    for c in &b.layout {
        let (fs, sign) = site_flip(c.site);
        let target = find_component(&b.layout, fs, c.old.mirror())
            .expect("self-mirror layout closed under the flip");
        let image = flip.apply_parent(c.old, v.rows(c.offset, c.len));
        out.gemm_tr(sign, &v.rows(target.offset, target.len), &image, 1.0);
    }
    out
}

/// Nonzero elements `(row, col, value)` of `f+_{0,up} f_{0,dn} S^-` in an impurity-site layout.
pub(crate) fn spin_flip_elements(layout: &[Component]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for c in layout {
        if c.old.two_sz != 1 {
            continue;
        }
        let Some((mid, s1)) = site_annihilate(DOWN, c.site) else {
            continue;
        };
        let Some((target, s2)) = site_create(UP, mid) else {
            continue;
        };
        let imp_down = Sector::new(0, -1);
        if let Some(t) = find_component(layout, target, imp_down) {
            out.push((t.offset, c.offset, s1 * s2));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn settings(lambda: f64) -> EngineSettings {
        EngineSettings::new(lambda)
    }

    #[test]
    fn site_operators_are_adjoint() {
        for spin in [UP, DOWN] {
            for s in 0..4 {
                if let Some((t, sign)) = site_create(spin, s) {
                    assert_eq!(site_annihilate(spin, t), Some((s, sign)));
                }
            }
        }
    }

    #[test]
    fn ising_only_impurity_spectrum() {
        let jpar = 0.8;
        let k = KondoParams::from_exchange(0.0, jpar, 0.0);
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        let spec = st.absolute_spectrum();
        let expected = [
            -jpar / 4.0,
            -jpar / 4.0,
            0.0,
            0.0,
            0.0,
            0.0,
            jpar / 4.0,
            jpar / 4.0,
        ];
        assert_eq!(spec.len(), 8);
        for (a, b) in spec.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn spin_flip_ground_energy() {
        let (jperp, jpar) = (0.3, 0.9);
        let k = KondoParams::from_exchange(jperp, jpar, 0.0);
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        assert_abs_diff_eq!(
            st.e0_accumulated,
            -jpar / 4.0 - jperp / 2.0,
            epsilon = 1e-14
        );
        assert_eq!(st.ground_sector, Sector::new(0, 0));
    }

    #[test]
    fn zeeman_only_ground_is_anti_aligned() {
        let h = 0.2;
        let k = KondoParams::from_exchange(0.0, 0.0, h);
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        assert_abs_diff_eq!(st.e0_accumulated, -h / 2.0, epsilon = 1e-15);
        let spec = st.absolute_spectrum();
        assert_eq!(
            spec.iter()
                .filter(|&&e| (e + h / 2.0).abs() < 1e-14)
                .count(),
            4
        );
        assert_eq!(
            spec.iter()
                .filter(|&&e| (e - h / 2.0).abs() < 1e-14)
                .count(),
            4
        );
        for (s, _) in st.ground_multiplet(1e-12) {
            // impurity down: two_sz = -1 + band spin
            let band = s.two_sz + 1;
            assert!([-1, 0, 1].contains(&band));
        }
    }

    #[test]
    fn add_site_requires_truncation() {
        let k = KondoParams::from_exchange(0.1, 0.5, 0.0);
        let chain = WilsonChain::build(2.0, 4).unwrap();
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        assert!(st.add_site(&chain).is_err());
        let st = st.truncate(1000, 1e-10).unwrap();
        let next = st.add_site(&chain).unwrap();
        assert_eq!(next.total_dim(), 32);
    }

    #[test]
    fn n_keep_below_sixteen_rejected() {
        let k = KondoParams::from_exchange(0.1, 0.5, 0.0);
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        assert!(st.truncate(15, 1e-10).is_err());
    }

    #[test]
    fn free_chain_matches_single_particle_levels() {
        let lambda = 2.0;
        let n_hops = 4;
        let chain = WilsonChain::build(lambda, n_hops).unwrap();
        let k = KondoParams::from_exchange(0.0, 0.0, 0.0);
        let mut st = IterationState::init_impurity_site(&k, settings(lambda))
            .unwrap()
            .truncate(100_000, 1e-10)
            .unwrap();
        for _ in 0..n_hops {
            st = st
                .add_site(&chain)
                .unwrap()
                .truncate(100_000, 1e-10)
                .unwrap();
        }
        // single-particle oracle
        let m = DMatrix::from_fn(n_hops + 1, n_hops + 1, |i, j| {
            if i + 1 == j {
                chain.hop[i]
            } else if j + 1 == i {
                chain.hop[j]
            } else {
                0.0
            }
        });
        let e_sp: f64 = m.symmetric_eigenvalues().iter().filter(|&&e| e < 0.0).sum();
        assert_abs_diff_eq!(st.e0_accumulated, 2.0 * e_sp, epsilon = 1e-12);
        // free impurity: every level at least doubly degenerate
        let spec = st.absolute_spectrum();
        assert_eq!(spec.len(), 2 * 4usize.pow(n_hops as u32 + 1));
        let mut i = 0;
        while i < spec.len() {
            let mut j = i;
            while j < spec.len() && (spec[j] - spec[i]).abs() < 1e-9 {
                j += 1;
            }
            assert!(j - i >= 2, "level {} has multiplicity {}", spec[i], j - i);
            i = j;
        }
    }

    #[test]
    fn truncation_keeps_whole_multiplets() {
        let lambda = 2.0;
        let chain = WilsonChain::build(lambda, 4).unwrap();
        let k = KondoParams::from_exchange(0.0, 0.0, 0.0);
        let st = IterationState::init_impurity_site(&k, settings(lambda))
            .unwrap()
            .truncate(100, 1e-10)
            .unwrap();
        let st = st.add_site(&chain).unwrap();
        let total = st.total_dim();
        assert_eq!(total, 32);
        // identity when n_keep covers everything
        let full = st.clone().truncate(32, 1e-10).unwrap();
        assert_eq!(full.total_kept(), 32);
        // the free impurity doubles every level, so a cut at an odd count
        // lands inside a multiplet and must take the partner as well
        let levels = st.lowest_levels(32);
        let cut = 17;
        assert!((levels[cut] - levels[cut - 1]).abs() < 1e-12);
        let t = st.clone().truncate(cut, 1e-10).unwrap();
        assert!(t.total_kept() > cut);
        let kept_max = t
            .blocks
            .values()
            .filter(|b| b.kept > 0)
            .map(|b| b.energies[b.kept - 1])
            .fold(f64::MIN, f64::max);
        let disc_min = t
            .blocks
            .values()
            .filter(|b| b.kept < b.dim())
            .map(|b| b.energies[b.kept])
            .fold(f64::MAX, f64::min);
        assert!(disc_min - kept_max > 1e-10);
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let lambda = 2.0;
        let chain = WilsonChain::build(lambda, 3).unwrap();
        let k = KondoParams::from_exchange(0.2, 0.7, 0.05);
        let mut st = IterationState::init_impurity_site(&k, settings(lambda))
            .unwrap()
            .truncate(64, 1e-10)
            .unwrap();
        for _ in 0..3 {
            st = st.add_site(&chain).unwrap().truncate(64, 1e-10).unwrap();
        }
        for b in st.blocks.values() {
            let g = b.vectors.transpose() * &b.vectors;
            let id = DMatrix::<f64>::identity(b.dim(), b.dim());
            assert!((g - id).amax() < 1e-10);
            assert!(b.energies.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(st.total_kept() >= 64 && st.total_kept() <= 80);
    }

    fn iterate(k: &KondoParams, st: EngineSettings, sites: usize, n_keep: usize) -> IterationState {
        let chain = WilsonChain::build(st.lambda, sites.max(1)).unwrap();
        let mut s = IterationState::init_impurity_site(k, st)
            .unwrap()
            .truncate(n_keep, 1e-10)
            .unwrap();
        for _ in 0..sites {
            s = s.add_site(&chain).unwrap().truncate(n_keep, 1e-10).unwrap();
        }
        s
    }

    #[test]
    fn flip_matrices_are_orthogonal_involutions() {
        let k = KondoParams::from_exchange(0.3, 0.9, 0.0);
        let st = iterate(&k, settings(2.0), 6, 120);
        assert!(st.uses_spin_flip());
        let mut seen = 0;
        for (sector, b) in &st.blocks {
            if sector.two_sz != 0 || b.kept == 0 {
                continue;
            }
            let r = st.flip_matrix(*sector).unwrap();
            let id = DMatrix::<f64>::identity(b.kept, b.kept);
            assert!((r.transpose() * r - &id).amax() < 1e-10);
            assert!((r * r - &id).amax() < 1e-10);
            seen += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn mirrored_sectors_share_spectra() {
        let k = KondoParams::from_exchange(0.2, 0.7, 0.0);
        let st = iterate(&k, settings(2.0), 4, 200);
        for (sector, b) in &st.blocks {
            let partner = &st.blocks[&sector.mirror()];
            assert_eq!(b.energies, partner.energies);
        }
    }

    #[test]
    fn spin_flip_path_matches_plain_diagonalization() {
        let k = KondoParams::from_exchange(0.25, 0.6, 0.0);
        let mut plain = settings(2.0);
        plain.use_spin_flip = false;
        let a = iterate(&k, settings(2.0), 5, 150);
        let b = iterate(&k, plain, 5, 150);
        assert!(!b.uses_spin_flip());
        assert_abs_diff_eq!(a.e0_accumulated, b.e0_accumulated, epsilon = 1e-10);
        for (x, y) in a.lowest_levels(60).iter().zip(b.lowest_levels(60)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn field_disables_spin_flip() {
        let k = KondoParams::from_exchange(0.2, 0.7, 0.01);
        let st = IterationState::init_impurity_site(&k, settings(2.0)).unwrap();
        assert!(!st.uses_spin_flip());
    }
}
