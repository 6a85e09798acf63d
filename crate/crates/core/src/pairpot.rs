//! Dipole-dipole coupled pair states in the one-excitation subspace.
//!
//! A pair ket |g, e; σ⟩ = (|g⟩|e⟩ + σ|e⟩|g⟩)/√2 combines one N = 0 and one
//! N = 1 eigenlevel of the single-molecule Hamiltonian. The interaction is
//! σ·u(r)·A, with A dimensionless and u(r) = d²/(4πε₀ h r³) in MHz.

use std::collections::BTreeMap;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::angular::{clebsch_gordan, phase_twice, wigner_6j, HalfInt};
use crate::error::{Error, Result};
use crate::molecule::{closed_form_levels, BasisLabel, Manifold, MoleculeModel, MoleculeSpec};

const DEBYE_CM: f64 = 3.335_640_951_981_52e-30;
const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub(crate) const PLANCK: f64 = 6.626_070_15e-34;

/// Dipole coupling strength d²/(4πε₀ h r³) in MHz for d in Debye and r in nm.
pub fn u_mhz(r_nm: f64, dipole_debye: f64) -> f64 {
    let d = dipole_debye * DEBYE_CM;
    let r = r_nm * 1e-9;
    d * d / (4.0 * std::f64::consts::PI * EPSILON_0 * PLANCK * r * r * r) / 1e6
}

/// Labels of a two-molecule matrix element ⟨g' e'|·|g e⟩: ground (N = 0)
/// and excited (N = 1) kets for bra and ket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumSet {
    pub ground_bra: BasisLabel,
    pub excited_bra: BasisLabel,
    pub ground_ket: BasisLabel,
    pub excited_ket: BasisLabel,
}

fn pair_sum(qs: &QuantumSet) -> f64 {
    let one = HalfInt::ONE;
    let (fi, mi) = (qs.ground_ket.f, qs.ground_ket.m);
    let (fpi, mpi) = (qs.excited_ket.f, qs.excited_ket.m);
    let (fj, mj) = (qs.ground_bra.f, qs.ground_bra.m);
    let (fpj, mpj) = (qs.excited_bra.f, qs.excited_bra.m);
    let cg = |a: HalfInt, ma: HalfInt, q: i32, b: HalfInt, mb: HalfInt| {
        clebsch_gordan(a, ma, one, HalfInt::int(q), b, mb).unwrap_or(0.0)
    };
    let mut s = 0.0;
    for q in -1..=1 {
        s += phase_twice(2 * q) * cg(fpj, -mpj, q, fi, -mi) * cg(fj, -mj, -q, fpi, -mpi);
    }
    s - 3.0 * cg(fpj, -mpj, 0, fi, -mi) * cg(fj, -mj, 0, fpi, -mpi)
}

fn valid_set(qs: &QuantumSet) -> bool {
    let ok = |l: &BasisLabel, n: i32| l.is_valid() && l.n == HalfInt::int(n);
    ok(&qs.ground_bra, 0) && ok(&qs.ground_ket, 0) && ok(&qs.excited_bra, 1) && ok(&qs.excited_ket, 1)
}

/// Dimensionless pair coupling A(g'e'; ge) in units of u(r), in the coupled basis.
///
/// Equals Σ_a w_a ⟨g'|n_a|e⟩⟨e'|n_a|g⟩ with w = (1, 1, −2).
pub fn dd_coefficient(qs: &QuantumSet) -> f64 {
    if !valid_set(qs) {
        return 0.0;
    }
    let (gi, ei, gj, ej) = (&qs.ground_ket, &qs.excited_ket, &qs.ground_bra, &qs.excited_bra);
    if gi.m + ei.m != gj.m + ej.m {
        return 0.0;
    }
    let i = gi.i;
    let h = HalfInt::HALF;
    let one = HalfInt::ONE;
    let t = |x: HalfInt| x.twice_value;
    let dims = (gj.f.dim() * ei.j.dim() * ej.f.dim() * ej.j.dim()) as f64;
    let ph = phase_twice(
        t(gi.f) + t(gj.f) + 2 + 2 * t(i) + 2 + t(ej.j) + t(ei.j) + 2 * t(gj.m) - 2 * t(ei.m) + t(ei.f) + t(gj.f),
    );
    let six = wigner_6j(ej.j, one, h, gi.f, i, ej.f).unwrap()
        * wigner_6j(one, one, HalfInt::ZERO, h, h, ej.j).unwrap()
        * wigner_6j(ei.j, one, h, gj.f, i, ei.f).unwrap()
        * wigner_6j(one, one, HalfInt::ZERO, h, h, ei.j).unwrap();
    2.0 * dims.sqrt() * ph * six * pair_sum(qs)
}

/// The coefficient with the bracket, phase and normalization exactly as
/// commonly printed; differs from [`dd_coefficient`] by the factor
/// 3·(−1)^{F'_ket+F_bra}·√([J'_bra]/[J'_ket]).
pub fn dd_coefficient_printed(qs: &QuantumSet) -> f64 {
    if !valid_set(qs) {
        return 0.0;
    }
    let (gi, ei, gj, ej) = (&qs.ground_ket, &qs.excited_ket, &qs.ground_bra, &qs.excited_bra);
    if gi.m + ei.m != gj.m + ej.m {
        return 0.0;
    }
    let i = gi.i;
    let h = HalfInt::HALF;
    let one = HalfInt::ONE;
    let t = |x: HalfInt| x.twice_value;
    let dims = (gj.f.dim() * ej.j.dim() * ej.f.dim() * ej.j.dim()) as f64;
    let ph = phase_twice(t(gi.f) + t(gj.f) + 2 + 2 * t(i) + 2 + t(ej.j) + t(ei.j) + 2 * t(gj.m) - 2 * t(ei.m));
    let six = wigner_6j(ej.j, one, h, gi.f, i, ej.f).unwrap()
        * wigner_6j(one, one, HalfInt::ZERO, h, h, ej.j).unwrap()
        * wigner_6j(ei.j, one, h, gj.f, i, ei.f).unwrap()
        * wigner_6j(one, one, HalfInt::ZERO, h, h, ei.j).unwrap();
    6.0 * dims.sqrt() * ph * six * pair_sum(qs)
}

/// Symmetrized one-excitation pair ket; indices refer to the ground and
/// excited eigenlevels of a [`MoleculeModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairBasisState {
    pub ground: usize,
    pub excited: usize,
    pub sigma: i8,
}

/// One (M_tot, σ) block: its kets, unperturbed energies and coupling matrix.
#[derive(Debug, Clone)]
pub struct PairBlock {
    /// Twice the total projection.
    pub m_tot2: i32,
    pub sigma: i8,
    pub states: Vec<PairBasisState>,
    pub h0: DVector<f64>,
    /// σ·A restricted to the block.
    pub coupling: DMatrix<f64>,
}

impl PairBlock {
    pub fn hamiltonian(&self, u: f64) -> DMatrix<f64> {
        let mut h = &self.coupling * u;
        for k in 0..h.nrows() {
            h[(k, k)] += self.h0[k];
        }
        h
    }

    /// Eigen-decomposition at coupling strength `u`, eigenvalues ascending.
    /// The diagonal is shifted by its mean before diagonalizing to keep the
    /// small dipolar splittings accurate.
    pub fn eigen(&self, u: f64) -> (DVector<f64>, DMatrix<f64>) {
        let shift = self.h0.mean();
        let mut h = self.hamiltonian(u);
        for k in 0..h.nrows() {
            h[(k, k)] -= shift;
        }
        let dim = h.nrows();
        let eig = SymmetricEigen::new(h);
        let order: Vec<usize> = (0..eig.eigenvalues.len())
            .sorted_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
            .collect();
        let vals = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k] + shift));
        let vecs = DMatrix::from_fn(dim, order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        (vals, vecs)
    }
}

/// The full one-excitation pair problem for one species.
#[derive(Debug, Clone)]
pub struct PairSystem {
    pub model: MoleculeModel,
    pub blocks: Vec<PairBlock>,
}

impl PairSystem {
    pub fn new(model: MoleculeModel) -> Self {
        let ng = model.ground.len();
        let ne = model.excited.len();
        let mut groups: BTreeMap<(i32, i8), Vec<PairBasisState>> = BTreeMap::new();
        for sigma in [1i8, -1] {
            for g in 0..ng {
                for e in 0..ne {
                    let m2 = model.ground[g].m.twice_value + model.excited[e].m.twice_value;
                    groups.entry((m2, sigma)).or_default().push(PairBasisState { ground: g, excited: e, sigma });
                }
            }
        }
        let blocks = groups
            .into_iter()
            .map(|((m_tot2, sigma), states)| {
                let h0 = DVector::from_iterator(
                    states.len(),
                    states.iter().map(|s| model.ground[s.ground].energy + model.excited[s.excited].energy),
                );
                let coupling = DMatrix::from_fn(states.len(), states.len(), |a, b| {
                    let (x, y) = (&states[a], &states[b]);
                    sigma as f64 * pair_coupling(&model, x.ground, x.excited, y.ground, y.excited)
                });
                PairBlock { m_tot2, sigma, states, h0, coupling }
            })
            .collect();
        PairSystem { model, blocks }
    }

    pub fn from_spec(spec: &MoleculeSpec) -> Result<Self> {
        Ok(Self::new(MoleculeModel::new(spec)?))
    }

    pub fn dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.states.len()).sum()
    }

    pub fn u(&self, r_nm: f64) -> Result<f64> {
        if !(r_nm > 0.0) || !r_nm.is_finite() {
            return Err(Error::Domain(format!("separation must be positive (got {r_nm} nm)")));
        }
        Ok(u_mhz(r_nm, self.model.spec.dipole_debye))
    }
}

/// A(g'e'; ge) between single-molecule eigenlevels, from the dipole matrix:
/// Σ_q D_q(e, g') D_q(e', g) − 3 D_0(e, g') D_0(e', g).
pub fn pair_coupling(model: &MoleculeModel, gp: usize, ep: usize, g: usize, e: usize) -> f64 {
    let d = &model.dipole;
    let mut s = 0.0;
    for q in 0..3 {
        s += d[q][(e, gp)] * d[q][(ep, g)];
    }
    s - 3.0 * d[1][(e, gp)] * d[1][(ep, g)]
}

/// Full pair Hamiltonian at separation `r_nm`, returned block by block.
pub fn build_pair_hamiltonian(r_nm: f64, spec: &MoleculeSpec) -> Result<Vec<(PairBlock, DMatrix<f64>)>> {
    let sys = PairSystem::from_spec(spec)?;
    let u = sys.u(r_nm)?;
    Ok(sys.blocks.iter().map(|b| (b.clone(), b.hamiltonian(u))).collect())
}

/// Large-r identification of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Asymptote {
    pub ground: Manifold,
    pub excited: Manifold,
    /// (E − E_∞)/u at the largest grid point.
    pub coefficient: f64,
    /// Branch index j when the curve belongs to an F = 1 ground asymptote
    /// with a closed-form counterpart.
    pub branch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialCurve {
    /// (r in nm, E in MHz).
    pub samples: Vec<(f64, f64)>,
    pub degeneracy: usize,
    pub m_tot2: i32,
    pub sigma: i8,
    /// Index within its block (energy order at the first grid point).
    pub index: usize,
    pub asymptote: Asymptote,
}

#[derive(Debug, Clone, Default)]
pub struct CurveSet {
    pub curves: Vec<PotentialCurve>,
    pub warnings: Vec<String>,
}

/// Eigenbranches of every block on an ascending r grid, followed by
/// maximal eigenvector overlap between neighbouring grid points.
pub fn potential_curves(r_grid: &[f64], spec: &MoleculeSpec) -> Result<CurveSet> {
    let sys = PairSystem::from_spec(spec)?;
    potential_curves_for(&sys, r_grid)
}

pub fn potential_curves_for(sys: &PairSystem, r_grid: &[f64]) -> Result<CurveSet> {
    if r_grid.is_empty() {
        return Err(Error::Domain("empty r grid".into()));
    }
    if r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("r grid must be strictly ascending".into()));
    }
    let us = r_grid.iter().map(|&r| sys.u(r)).collect::<Result<Vec<_>>>()?;
    let cf = closed_form_levels(&sys.model.spec).ok();
    let per_block: Vec<(Vec<PotentialCurve>, Vec<String>)> = sys
        .blocks
        .par_iter()
        .map(|blk| track_block(sys, blk, r_grid, &us, cf.as_ref()))
        .collect();
    let mut set = CurveSet::default();
    for (c, w) in per_block {
        set.curves.extend(c);
        set.warnings.extend(w);
    }
    assign_degeneracy(&mut set.curves);
    Ok(set)
}

fn track_block(
    sys: &PairSystem,
    blk: &PairBlock,
    r_grid: &[f64],
    us: &[f64],
    cf: Option<&crate::molecule::ClosedFormLevels>,
) -> (Vec<PotentialCurve>, Vec<String>) {
    let n = blk.states.len();
    let mut warnings = Vec::new();
    let (e0, v0) = blk.eigen(us[0]);
    // slot k holds curve k; perm[k] = eigen index at the current point
    let mut energies: Vec<Vec<f64>> = (0..n).map(|k| vec![e0[k]]).collect();
    let mut prev = v0;
    for (step, &u) in us.iter().enumerate().skip(1) {
        let (e, v) = blk.eigen(u);
        let ov = prev.transpose() * &v;
        let mut pairs: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, ov[(a, b)] * ov[(a, b)]))
            .collect();
        pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        let mut taken_a = vec![false; n];
        let mut taken_b = vec![false; n];
        let mut assign = vec![0usize; n];
        for (a, b, w) in pairs {
            if taken_a[a] || taken_b[b] {
                continue;
            }
            taken_a[a] = true;
            taken_b[b] = true;
            assign[a] = b;
            if w < 0.5 {
                warnings.push(format!(
                    "block (2M={}, σ={}) curve {} at r={} nm: overlap {:.3} below 0.5",
                    blk.m_tot2, blk.sigma, a, r_grid[step], w
                ));
            }
        }
        let mut next = DMatrix::zeros(n, n);
        for a in 0..n {
            energies[a].push(e[assign[a]]);
            next.set_column(a, &v.column(assign[a]));
        }
        prev = next;
    }
    let u_last = *us.last().unwrap();
    let curves = (0..n)
        .map(|k| {
            let col = prev.column(k);
            let dom = (0..n).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            let st = blk.states[dom];
            let ground = sys.model.ground[st.ground].manifold;
            let excited = sys.model.excited[st.excited].manifold;
            let e_inf = blk.h0[dom];
            let coefficient = (energies[k].last().unwrap() - e_inf) / u_last;
            let branch = cf.and_then(|cf| {
                if ground != Manifold::ground(1) {
                    return None;
                }
                let c = cf.c_factor(excited)?;
                closed_branch_coefficients(excited)
                    .iter()
                    .enumerate()
                    .min_by(|x, y| (x.1 .0 * c - coefficient).abs().total_cmp(&(y.1 .0 * c - coefficient).abs()))
                    .filter(|(_, (v, _))| (v * c - coefficient).abs() < 0.05 * (v * c).abs())
                    .map(|(j, _)| j + 1)
            });
            PotentialCurve {
                samples: r_grid.iter().copied().zip(energies[k].iter().copied()).collect(),
                degeneracy: 1,
                m_tot2: blk.m_tot2,
                sigma: blk.sigma,
                index: k,
                asymptote: Asymptote { ground, excited, coefficient, branch },
            }
        })
        .collect();
    (curves, warnings)
}

fn assign_degeneracy(curves: &mut [PotentialCurve]) {
    let n = curves.len();
    let mut counts = vec![0usize; n];
    for a in 0..n {
        for b in 0..n {
            let same = curves[a].samples.iter().zip(&curves[b].samples).all(|(x, y)| {
                (x.1 - y.1).abs() <= 1e-9 * x.1.abs().max(1.0)
            });
            if same {
                counts[a] += 1;
            }
        }
    }
    for (c, k) in curves.iter_mut().zip(counts) {
        c.degeneracy = k;
    }
}

/// Closed-form branch coefficients (in units of C·u) and degeneracies of the
/// curves asymptoting to (N=0, F=1) ⊗ `manifold`, ordered by branch index j.
pub fn closed_branch_coefficients(manifold: Manifold) -> Vec<(f64, usize)> {
    let s3 = 3f64.sqrt();
    let s7 = 7f64.sqrt();
    let mags: Vec<(f64, usize)> = match manifold.f.twice_value / 2 {
        0 => vec![(2.0 / 9.0, 1), (1.0 / 9.0, 2)],
        1 => vec![((s3 + 1.0) / 36.0, 1), (2.0 / 36.0, 3), (1.0 / 36.0, 4), ((s3 - 1.0) / 36.0, 1)],
        2 => vec![
            ((7.0 + s7) / 36.0, 1),
            (0.257898, 2),
            ((s3 + 1.0) / 12.0, 2),
            (1.0 / 6.0, 3),
            (0.156354, 2),
            ((7.0 - s7) / 36.0, 1),
            ((s3 - 1.0) / 12.0, 2),
            (0.00956771, 2),
        ],
        _ => vec![],
    };
    if manifold.n != 1 {
        return vec![];
    }
    mags.into_iter().flat_map(|(m, g)| [(-m, g), (m, g)]).collect()
}

/// Closed-form asymptotic branch energies E_gr + E^(k) ± C·coef·u(r) with
/// their degeneracies (counting both exchange symmetries).
pub fn asymptotic_curves(manifold: Manifold, r_nm: f64, spec: &MoleculeSpec) -> Result<Vec<(f64, usize)>> {
    if !(r_nm > 0.0) {
        return Err(Error::Domain(format!("separation must be positive (got {r_nm} nm)")));
    }
    let cf = closed_form_levels(spec)?;
    let e = cf
        .energy(manifold)
        .filter(|_| manifold.n == 1)
        .ok_or_else(|| Error::Domain(format!("no asymptotic curves for manifold {manifold}")))?;
    let c = cf
        .c_factor(manifold)
        .ok_or_else(|| Error::Domain(format!("manifold {manifold} is not dipole coupled to F=1")))?;
    let u = u_mhz(r_nm, spec.dipole_debye);
    Ok(closed_branch_coefficients(manifold)
        .into_iter()
        .map(|(k, g)| (cf.e_gr + e + c * k * u, g))
        .collect())
}

/// One asymptotic branch obtained by degenerate projection: the eigenvalue
/// of σA on (N=0, F=1) ⊗ manifold and its eigenvectors.
#[derive(Debug, Clone)]
pub struct ManifoldBranch {
    /// Branch index j (1-based).
    pub j: usize,
    /// Energy shift in units of u(r), including the prefactor C.
    pub coefficient: f64,
    /// Each eigenvector: exchange symmetry and amplitudes over the product
    /// (ground F=1 index in M order) × (manifold member in M order).
    pub vectors: Vec<(i8, DVector<f64>)>,
}

impl ManifoldBranch {
    pub fn degeneracy(&self) -> usize {
        self.vectors.len()
    }
}

/// The r → ∞ limit of the curves asymptoting to (N=0, F=1) ⊗ `manifold`.
///
/// Branches are ranked by decreasing |coefficient|; within a magnitude the
/// negative (attractive) branch comes first, giving j = 2m+1 and j = 2m+2.
pub fn manifold_branches(model: &MoleculeModel, manifold: Manifold) -> Result<Vec<ManifoldBranch>> {
    let gidx = model.ground_f1();
    let eidx = model.manifold_indices(manifold);
    if eidx.is_empty() {
        return Err(Error::Domain(format!("manifold {manifold} has no levels")));
    }
    let ne = eidx.len();
    let dim = gidx.len() * ne;
    let a = DMatrix::from_fn(dim, dim, |r, c| {
        let (gp, ep) = (gidx[r / ne], eidx[r % ne]);
        let (g, e) = (gidx[c / ne], eidx[c % ne]);
        pair_coupling(model, gp, ep, g, e)
    });
    let mut found: Vec<(f64, i8, DVector<f64>)> = Vec::new();
    for sigma in [1i8, -1] {
        let eig = SymmetricEigen::new(&a * sigma as f64);
        for k in 0..dim {
            found.push((eig.eigenvalues[k], sigma, eig.eigenvectors.column(k).into_owned()));
        }
    }
    // eigenvalues of dark (uncoupled) combinations vanish and carry no branch
    let scale = found.iter().map(|x| x.0.abs()).fold(0.0, f64::max);
    found.retain(|x| x.0.abs() > 1e-10 * scale);
    let mut mags: Vec<f64> = Vec::new();
    for (v, _, _) in &found {
        if !mags.iter().any(|m| (m - v.abs()).abs() <= 1e-9 * scale) {
            mags.push(v.abs());
        }
    }
    mags.sort_by(|x, y| y.total_cmp(x));
    let mut branches: Vec<ManifoldBranch> = Vec::new();
    for (rank, m) in mags.iter().enumerate() {
        for neg in [true, false] {
            let members: Vec<&(f64, i8, DVector<f64>)> = found
                .iter()
                .filter(|x| (x.0.abs() - m).abs() <= 1e-9 * scale && (x.0 < 0.0) == neg)
                .collect();
            if members.is_empty() {
                continue;
            }
            let coefficient = members.iter().map(|x| x.0).sum::<f64>() / members.len() as f64;
            branches.push(ManifoldBranch {
                j: 2 * rank + if neg { 1 } else { 2 },
                coefficient,
                vectors: members.iter().map(|x| (x.1, x.2.clone())).collect(),
            });
        }
    }
    Ok(branches)
}

/// Branch coefficients read off a full diagonalization at finite `r_nm`:
/// (E − E_∞)/u for every eigenstate whose dominant component lies in
/// (N=0, F=1) ⊗ `manifold`, grouped into distinct values with multiplicities.
pub fn numeric_branch_coefficients(sys: &PairSystem, manifold: Manifold, r_nm: f64) -> Result<Vec<(f64, usize)>> {
    let u = sys.u(r_nm)?;
    let g1 = Manifold::ground(1);
    let mut vals: Vec<f64> = Vec::new();
    for blk in &sys.blocks {
        let (e, v) = blk.eigen(u);
        for k in 0..e.len() {
            let col = v.column(k);
            let dom = (0..col.len()).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            let st = blk.states[dom];
            if sys.model.ground[st.ground].manifold == g1 && sys.model.excited[st.excited].manifold == manifold {
                vals.push((e[k] - blk.h0[dom]) / u);
            }
        }
    }
    vals.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for v in vals {
        match out.last_mut() {
            Some((m, c)) if (v - *m / *c as f64).abs() <= 1e-6 * v.abs().max(1e-3) => {
                *m += v;
                *c += 1;
            }
            _ => out.push((v, 1)),
        }
    }
    Ok(out.into_iter().map(|(s, c)| (s / c as f64, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molecule::{Branch, MoleculeModel};
    use approx::assert_relative_eq;

    fn system() -> PairSystem {
        PairSystem::from_spec(&MoleculeSpec::cacl()).unwrap()
    }

    #[test]
    fn unit_conversion_at_200nm() {
        assert_relative_eq!(u_mhz(200.0, 4.265), 0.343156, max_relative = 2e-6);
    }

    #[test]
    fn dimension_and_blocks() {
        let sys = system();
        assert_eq!(sys.dimension(), 8 * 24 * 2);
        for b in &sys.blocks {
            let a = &b.coupling;
            assert!((a - a.transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_positive_separation() {
        assert!(build_pair_hamiltonian(0.0, &MoleculeSpec::cacl()).is_err());
        assert!(build_pair_hamiltonian(-3.0, &MoleculeSpec::cacl()).is_err());
    }

    #[test]
    fn coupled_formula_matches_eigenbasis_assembly() {
        let model = MoleculeModel::new(&MoleculeSpec::cacl()).unwrap();
        let mut worst: f64 = 0.0;
        for (gp, g) in [(0usize, 1usize), (2, 2), (4, 0), (6, 3)] {
            for ep in 0..model.excited.len() {
                for e in 0..model.excited.len() {
                    let mut s = 0.0;
                    for (lep, aep) in &model.excited[ep].components {
                        for (le, ae) in &model.excited[e].components {
                            let qs = QuantumSet {
                                ground_bra: model.ground[gp].components[0].0,
                                excited_bra: *lep,
                                ground_ket: model.ground[g].components[0].0,
                                excited_ket: *le,
                            };
                            s += aep * ae * dd_coefficient(&qs);
                        }
                    }
                    worst = worst.max((s - pair_coupling(&model, gp, ep, g, e)).abs());
                }
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn printed_coefficient_relation() {
        let model = MoleculeModel::new(&MoleculeSpec::cacl()).unwrap();
        let basis = crate::molecule::manifold_basis(1, model.spec.nuclear_spin);
        let ground = crate::molecule::manifold_basis(0, model.spec.nuclear_spin);
        let mut n = 0;
        for gj in &ground {
            for gi in &ground {
                for ej in &basis {
                    for ei in &basis {
                        let qs = QuantumSet { ground_bra: *gj, excited_bra: *ej, ground_ket: *gi, excited_ket: *ei };
                        let a = dd_coefficient(&qs);
                        let p = dd_coefficient_printed(&qs);
                        let rel = 3.0
                            * phase_twice(ei.f.twice_value + gj.f.twice_value)
                            * (ej.j.dim() as f64 / ei.j.dim() as f64).sqrt();
                        assert!((p - rel * a).abs() < 1e-12);
                        if a.abs() > 1e-9 {
                            n += 1;
                        }
                    }
                }
            }
        }
        assert!(n > 1000);
    }

    #[test]
    fn m_conservation_and_f3_decoupling() {
        let model = MoleculeModel::new(&MoleculeSpec::cacl()).unwrap();
        let g = model.ground_f1();
        let f3 = model.manifold_indices(Manifold::excited(3, Branch::Single));
        for &gp in &g {
            for &gk in &g {
                for &e in &f3 {
                    for ep in 0..model.excited.len() {
                        assert!(pair_coupling(&model, gp, ep, gk, e).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn f0_branches() {
        let model = MoleculeModel::new(&MoleculeSpec::cacl()).unwrap();
        let br = manifold_branches(&model, Manifold::excited(0, Branch::Single)).unwrap();
        let got: Vec<(usize, f64, usize)> = br.iter().map(|b| (b.j, b.coefficient, b.degeneracy())).collect();
        let want = [(1, -2.0 / 9.0, 1), (2, 2.0 / 9.0, 1), (3, -1.0 / 9.0, 2), (4, 1.0 / 9.0, 2)];
        assert_eq!(got.len(), 4);
        for (g, w) in got.iter().zip(want) {
            assert_eq!(g.0, w.0);
            assert_relative_eq!(g.1, w.1, epsilon = 1e-12);
            assert_eq!(g.2, w.2);
        }
    }

    #[test]
    fn asymptotic_degeneracy_sums() {
        let spec = MoleculeSpec::cacl();
        let total = |m: Manifold| -> usize { asymptotic_curves(m, 300.0, &spec).unwrap().iter().map(|x| x.1).sum() };
        assert_eq!(total(Manifold::excited(0, Branch::Single)), 6);
        assert_eq!(total(Manifold::excited(1, Branch::Minus)), 18);
        assert_eq!(total(Manifold::excited(2, Branch::Plus)), 30);
    }

    #[test]
    fn curves_single_point_and_counts() {
        let sys = system();
        let set = potential_curves_for(&sys, &[250.0]).unwrap();
        assert_eq!(set.curves.len(), 384);
        assert!(set.curves.iter().all(|c| c.samples.len() == 1));
        assert!(potential_curves_for(&sys, &[300.0, 200.0]).is_err());
    }
}
