//! Single-molecule hyperfine structure of a ²Σ rotor in the N = 0, 1 manifolds.
//!
//! Energies are in MHz (h = 1). The coupled basis is |N, S=1/2, J, I, F, M⟩.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::angular::{clebsch_gordan, phase_twice, wigner_6j, wigner_9j, HalfInt};
use crate::error::{Error, Result};

/// Spectroscopic constants of one molecular species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoleculeSpec {
    /// Rotational constant B (MHz).
    pub b_rot: f64,
    /// Spin-rotation constant γ (MHz).
    pub gamma: f64,
    /// Fermi-contact constant b (MHz).
    pub b_fermi: f64,
    /// Dipolar spin-spin constant c (MHz).
    pub c_dip: f64,
    /// Electric quadrupole constant eQq (MHz).
    pub eqq: f64,
    /// Permanent dipole moment (Debye).
    pub dipole_debye: f64,
    pub nuclear_spin: HalfInt,
    pub mass_amu: f64,
}

impl MoleculeSpec {
    /// ⁴⁰Ca³⁵Cl.
    pub fn cacl() -> Self {
        MoleculeSpec {
            b_rot: 4563.746,
            gamma: 42.208,
            b_fermi: 19.30134,
            c_dip: 12.4554,
            eqq: 1.00284,
            dipole_debye: 4.265,
            nuclear_spin: HalfInt::from_twice(3),
            mass_amu: 74.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.b_rot, self.gamma, self.b_fermi, self.c_dip, self.eqq, self.dipole_debye, self.mass_amu];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("molecule constants must be finite".into()));
        }
        if self.b_rot <= 0.0 {
            return Err(Error::Config("rotational constant must be positive".into()));
        }
        if self.nuclear_spin.twice_value < 0 {
            return Err(Error::Config("nuclear spin must be non-negative".into()));
        }
        let hf = self.gamma.abs().max(self.b_fermi.abs()).max(self.c_dip.abs()).max(self.eqq.abs());
        if hf >= self.b_rot {
            return Err(Error::Config("rotational constant must dominate the fine and hyperfine constants".into()));
        }
        if self.mass_amu <= 0.0 {
            return Err(Error::Config("mass must be positive".into()));
        }
        Ok(())
    }
}

/// One coupled-basis ket |N, S, J, I, F, M_F⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisLabel {
    pub n: HalfInt,
    pub s: HalfInt,
    pub j: HalfInt,
    pub i: HalfInt,
    pub f: HalfInt,
    pub m: HalfInt,
}

impl BasisLabel {
    pub fn new(n: i32, j: HalfInt, i: HalfInt, f: HalfInt, m: HalfInt) -> Self {
        BasisLabel { n: HalfInt::int(n), s: HalfInt::HALF, j, i, f, m }
    }

    pub fn is_valid(&self) -> bool {
        let tri = |a: HalfInt, b: HalfInt, c: HalfInt| {
            let (a, b, c) = (a.twice_value, b.twice_value, c.twice_value);
            c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
        };
        self.s == HalfInt::HALF
            && self.n.is_integer()
            && self.n.twice_value >= 0
            && tri(self.n, self.s, self.j)
            && tri(self.j, self.i, self.f)
            && self.f.admits(self.m)
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|N={},J={},F={},M={}⟩", self.n, self.j, self.f, self.m)
    }
}

/// All coupled-basis kets of rotational manifold `n`, ordered by (F, M, J).
pub fn manifold_basis(n: i32, nuclear_spin: HalfInt) -> Vec<BasisLabel> {
    let nn = HalfInt::int(n);
    let mut out = Vec::new();
    let js: Vec<HalfInt> = if n == 0 {
        vec![HalfInt::HALF]
    } else {
        vec![nn - HalfInt::HALF, nn + HalfInt::HALF]
    };
    let tf_max = js.iter().map(|j| j.twice_value + nuclear_spin.twice_value).max().unwrap();
    let tf_min = js
        .iter()
        .map(|j| (j.twice_value - nuclear_spin.twice_value).abs())
        .min()
        .unwrap();
    let mut tf = tf_min;
    while tf <= tf_max {
        let f = HalfInt::from_twice(tf);
        for m in f.projections() {
            for &j in &js {
                let lab = BasisLabel::new(n, j, nuclear_spin, f, m);
                if lab.is_valid() {
                    out.push(lab);
                }
            }
        }
        tf += 2;
    }
    out
}

fn bracket(xs: &[HalfInt]) -> f64 {
    xs.iter().map(|x| x.dim() as f64).product()
}

/// ⟨bra|H_m|ket⟩ in MHz.
pub fn hm_element(bra: &BasisLabel, ket: &BasisLabel, spec: &MoleculeSpec) -> f64 {
    if bra.f != ket.f || bra.m != ket.m || bra.i != ket.i {
        return 0.0;
    }
    let (np, jp) = (bra.n, bra.j);
    let (n, j, f, i) = (ket.n, ket.j, ket.f, ket.i);
    let h = HalfInt::HALF;
    let one = HalfInt::ONE;
    let two = HalfInt::int(2);
    let iv = i.value();
    let mut v = 0.0;

    if n == np {
        if j == jp {
            let (nv, jv) = (n.value(), j.value());
            v += spec.b_rot * nv * (nv + 1.0) + spec.gamma / 2.0 * (jv * (jv + 1.0) - nv * (nv + 1.0) - 0.75);
        }
        let ph = phase_twice(n.twice_value + 1 + j.twice_value + jp.twice_value + i.twice_value + f.twice_value + 2);
        let six = wigner_6j(jp, h, n, h, j, one).unwrap() * wigner_6j(f, jp, i, one, i, j).unwrap();
        v += (spec.b_fermi + spec.c_dip / 3.0)
            * ph
            * (bracket(&[j, jp, i]) * iv * (iv + 1.0) * 1.5).sqrt()
            * six;
    }

    let cg_n = cg_or_zero(np, HalfInt::ZERO, two, HalfInt::ZERO, n, HalfInt::ZERO);
    if cg_n != 0.0 {
        let ph = phase_twice(jp.twice_value + i.twice_value + f.twice_value + 2);
        v += spec.c_dip
            * 5f64.sqrt()
            * ph
            * cg_n
            * wigner_6j(f, jp, i, one, i, j).unwrap()
            * wigner_9j(n, np, two, h, h, one, j, jp, one).unwrap()
            * (bracket(&[np, j, jp, i]) * iv * (iv + 1.0)).sqrt();

        let norm = cg_or_zero(i, -i, two, HalfInt::ZERO, i, -i);
        if norm != 0.0 && spec.eqq != 0.0 {
            let ph = phase_twice(1 + 2 * jp.twice_value + i.twice_value + f.twice_value - n.twice_value);
            v += spec.eqq * ph / 4.0 * cg_n / norm
                * wigner_6j(jp, np, h, n, j, two).unwrap()
                * wigner_6j(f, jp, i, two, i, j).unwrap()
                * bracket(&[np, j, jp, i]).sqrt();
        }
    }
    v
}

fn cg_or_zero(j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j3: HalfInt, m3: HalfInt) -> f64 {
    clebsch_gordan(j1, m1, j2, m2, j3, m3).unwrap_or(0.0)
}

/// ⟨bra|D†_q|ket⟩ for the dimensionless dipole operator; nonzero only when
/// `bra.n == ket.n + 1` (D†_q raises the rotational quantum number).
pub fn dipole_element(bra: &BasisLabel, q: i32, ket: &BasisLabel) -> f64 {
    if !(-1..=1).contains(&q) || bra.n.twice_value != ket.n.twice_value + 2 || bra.i != ket.i {
        return 0.0;
    }
    let (n, j, f, m) = (bra.n, bra.j, bra.f, bra.m);
    let (np, jp, fp, mp) = (ket.n, ket.j, ket.f, ket.m);
    let i = bra.i;
    let h = HalfInt::HALF;
    let one = HalfInt::ONE;
    let qh = HalfInt::int(q);
    let cg1 = cg_or_zero(f, -m, one, qh, fp, -mp);
    if cg1 == 0.0 {
        return 0.0;
    }
    let ph = phase_twice(fp.twice_value + n.twice_value + 1 + i.twice_value + j.twice_value + jp.twice_value + mp.twice_value - m.twice_value);
    bracket(&[f, j, jp, n]).sqrt()
        * ph
        * cg1
        * cg_or_zero(n, HalfInt::ZERO, one, HalfInt::ZERO, np, HalfInt::ZERO)
        * wigner_6j(j, one, jp, fp, i, f).unwrap()
        * wigner_6j(n, one, np, jp, h, j).unwrap()
}

/// Two-branch label within an F block of the excited manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Single,
    Minus,
    Plus,
}

/// A hyperfine manifold: rotational level, total F and branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Manifold {
    pub n: i32,
    pub f: HalfInt,
    pub branch: Branch,
}

impl Manifold {
    pub const fn excited(f: i32, branch: Branch) -> Self {
        Manifold { n: 1, f: HalfInt::int(f), branch }
    }

    pub const fn ground(f: i32) -> Self {
        Manifold { n: 0, f: HalfInt::int(f), branch: Branch::Single }
    }

    /// Parses tags such as `0`, `1-`, `2+`, `3`, `gr`.
    pub fn parse(tag: &str) -> Result<Self> {
        let t = tag.trim();
        let (body, branch) = match t.chars().last() {
            Some('-') => (&t[..t.len() - 1], Branch::Minus),
            Some('+') => (&t[..t.len() - 1], Branch::Plus),
            _ => (t, Branch::Single),
        };
        if body == "gr" && branch == Branch::Single {
            return Ok(Manifold::ground(1));
        }
        let f: i32 = body
            .trim_start_matches('(')
            .trim_end_matches(')')
            .parse()
            .map_err(|_| Error::Config(format!("unknown manifold tag '{tag}'")))?;
        Ok(Manifold::excited(f, branch))
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.n == 0 {
            return if self.f == HalfInt::ONE { write!(f, "gr") } else { write!(f, "gr{}", self.f) };
        }
        let b = match self.branch {
            Branch::Single => "",
            Branch::Minus => "-",
            Branch::Plus => "+",
        };
        write!(f, "{}{}", self.f, b)
    }
}

/// One eigenlevel of H_m (a single M_F member of a degenerate multiplet).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfineLevel {
    pub components: Vec<(BasisLabel, f64)>,
    pub energy: f64,
    pub manifold: Manifold,
    pub f: HalfInt,
    pub m: HalfInt,
    /// φ with |−⟩ = cos(φ/2)|J=N−1/2⟩ + sin(φ/2)|J=N+1/2⟩, for two-level blocks.
    pub mixing_angle: Option<f64>,
}

/// Diagonalizes H_m within manifold `n` (0 or 1), block by block in (F, M_F).
///
/// Levels are ordered by (F, M, energy). In two-level blocks the lower level
/// is the `−` branch; eigenvectors are signed so that the J = N−1/2 amplitude
/// is non-negative.
pub fn build_and_diagonalize(n: i32, spec: &MoleculeSpec) -> Result<Vec<HyperfineLevel>> {
    if !(0..=1).contains(&n) {
        return Err(Error::Domain(format!("rotational manifold N={n} not supported")));
    }
    let basis = manifold_basis(n, spec.nuclear_spin);
    let mut levels = Vec::with_capacity(basis.len());
    let groups = basis.iter().enumerate().fold(Vec::<Vec<usize>>::new(), |mut acc, (k, lab)| {
        match acc.last_mut() {
            Some(g) if basis[g[0]].f == lab.f && basis[g[0]].m == lab.m => g.push(k),
            _ => acc.push(vec![k]),
        }
        acc
    });
    for g in groups {
        let dim = g.len();
        let h = DMatrix::from_fn(dim, dim, |a, b| hm_element(&basis[g[a]], &basis[g[b]], spec));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        for (rank, &k) in order.iter().enumerate() {
            let mut vec: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if vec[0] < 0.0 || (vec[0] == 0.0 && vec.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)) {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            let branch = match (dim, rank) {
                (1, _) => Branch::Single,
                (_, 0) => Branch::Minus,
                _ => Branch::Plus,
            };
            let lab0 = basis[g[0]];
            let mixing_angle = (dim == 2).then(|| 2.0 * vec[1].atan2(vec[0]));
            levels.push(HyperfineLevel {
                components: g.iter().map(|&b| basis[b]).zip(vec).collect(),
                energy: eig.eigenvalues[k],
                manifold: Manifold { n, f: lab0.f, branch },
                f: lab0.f,
                m: lab0.m,
                mixing_angle,
            });
        }
    }
    Ok(levels)
}

/// Closed-form level energies, mixing angles and branch prefactors for I = 3/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormLevels {
    pub e_gr: f64,
    pub e_ground_f2: f64,
    pub e0: f64,
    pub e1_minus: f64,
    pub e1_plus: f64,
    pub e2_minus: f64,
    pub e2_plus: f64,
    pub phi1_minus: f64,
    pub phi1_plus: f64,
    pub phi2_minus: f64,
    pub phi2_plus: f64,
    /// v₁, v₂, v₃ of the F = 1 block.
    pub v1: [f64; 3],
    /// v₁, v₂, v₃ of the F = 2 block.
    pub v2: [f64; 3],
    /// The F = 2 angle without the factor 4 in the numerator of its tangent.
    pub phi2_minus_uncorrected: f64,
}

impl ClosedFormLevels {
    /// Energy of an excited manifold (or the F = 1 ground level).
    pub fn energy(&self, m: Manifold) -> Option<f64> {
        match (m.n, m.f.twice_value / 2, m.branch) {
            (0, 1, _) => Some(self.e_gr),
            (0, 2, _) => Some(self.e_ground_f2),
            (1, 0, _) => Some(self.e0),
            (1, 1, Branch::Minus) => Some(self.e1_minus),
            (1, 1, Branch::Plus) => Some(self.e1_plus),
            (1, 2, Branch::Minus) => Some(self.e2_minus),
            (1, 2, Branch::Plus) => Some(self.e2_plus),
            _ => None,
        }
    }

    pub fn mixing_angle(&self, m: Manifold) -> Option<f64> {
        match (m.n, m.f.twice_value / 2, m.branch) {
            (1, 1, Branch::Minus) => Some(self.phi1_minus),
            (1, 1, Branch::Plus) => Some(self.phi1_plus),
            (1, 2, Branch::Minus) => Some(self.phi2_minus),
            (1, 2, Branch::Plus) => Some(self.phi2_plus),
            _ => None,
        }
    }

    /// Branch prefactor C of the asymptotic dipole-dipole potentials
    /// (1 for the F = 0 manifold).
    pub fn c_factor(&self, m: Manifold) -> Option<f64> {
        match (m.n, m.f.twice_value / 2) {
            (1, 0) => Some(1.0),
            (1, 1) => {
                let p = self.mixing_angle(m)?;
                Some(((p / 2.0).cos() - 5f64.sqrt() * (p / 2.0).sin()).powi(2))
            }
            (1, 2) => Some(1.0 - self.mixing_angle(m)?.sin()),
            _ => None,
        }
    }

    /// Normalization c_k dividing the summed projectors into coupling
    /// matrices: 1, C^(1)/36, C^(2) for F = 0, 1, 2.
    pub fn coupling_norm(&self, m: Manifold) -> Option<f64> {
        let c = self.c_factor(m)?;
        Some(if m.f == HalfInt::ONE { c / 36.0 } else { c })
    }
}

pub fn closed_form_levels(spec: &MoleculeSpec) -> Result<ClosedFormLevels> {
    if spec.nuclear_spin.twice_value != 3 {
        return Err(Error::UnsupportedSpin(spec.nuclear_spin.twice_value));
    }
    let (bb, g, b, c, q) = (spec.b_rot, spec.gamma, spec.b_fermi, spec.c_dip, spec.eqq);
    let s5 = 5f64.sqrt();
    let v1 = [
        2.0 * bb - (12.0 * g - 5.0 * b + 5.0 * c) / 12.0,
        2.0 * bb + (30.0 * g - 55.0 * b - 11.0 * c - 3.0 * q) / 60.0,
        (10.0 * b + 5.0 * c - 3.0 * q) / (6.0 * s5),
    ];
    let v2 = [
        2.0 * bb - g - (b - c) / 4.0,
        2.0 * bb + g / 2.0 - (5.0 * b + c - 3.0 * q) / 20.0,
        b + (5.0 * c + q) / 10.0,
    ];
    let pair = |v: [f64; 3]| {
        let mean = (v[0] + v[1]) / 2.0;
        let rad = (((v[0] - v[1]) / 2.0).powi(2) + v[2] * v[2]).sqrt();
        (mean - rad, mean + rad)
    };
    let (e1m, e1p) = pair(v1);
    let (e2m, e2p) = pair(v2);
    let phi1 = (4.0 * s5 * (10.0 * b + 5.0 * c - 3.0 * q) / (-90.0 * g + 80.0 * b - 14.0 * c + 3.0 * q)).atan();
    let phi2 = (4.0 * (10.0 * b + 5.0 * c + q) / (-30.0 * g + 6.0 * c - 3.0 * q)).atan();
    let phi2_raw = ((10.0 * b + 5.0 * c + q) / (-30.0 * g + 6.0 * c - 3.0 * q)).atan();
    Ok(ClosedFormLevels {
        e_gr: -5.0 * (b + c / 3.0) / 4.0,
        e_ground_f2: 3.0 * (b + c / 3.0) / 4.0,
        e0: 2.0 * bb + (2.0 * g - 5.0 * b - c - q) / 4.0,
        e1_minus: e1m,
        e1_plus: e1p,
        e2_minus: e2m,
        e2_plus: e2p,
        phi1_minus: phi1,
        phi1_plus: phi1 + PI,
        phi2_minus: phi2,
        phi2_plus: phi2 + PI,
        v1,
        v2,
        phi2_minus_uncorrected: phi2_raw,
    })
}

/// Single-molecule eigenstructure used by the pair and effective modules:
/// the 8 (for I = 3/2) ground and 24 excited eigenlevels and the dipole
/// matrix ⟨e|D†_q|g⟩ between them.
#[derive(Debug, Clone)]
pub struct MoleculeModel {
    pub spec: MoleculeSpec,
    pub ground: Vec<HyperfineLevel>,
    pub excited: Vec<HyperfineLevel>,
    /// `dipole[q+1][(e, g)]`.
    pub dipole: [DMatrix<f64>; 3],
}

impl MoleculeModel {
    pub fn new(spec: &MoleculeSpec) -> Result<Self> {
        spec.validate()?;
        let ground = build_and_diagonalize(0, spec)?;
        let excited = build_and_diagonalize(1, spec)?;
        let dip = |q: i32| {
            DMatrix::from_fn(excited.len(), ground.len(), |e, g| {
                let mut s = 0.0;
                for (be, ae) in &excited[e].components {
                    for (bg, ag) in &ground[g].components {
                        s += ae * ag * dipole_element(be, q, bg);
                    }
                }
                s
            })
        };
        let dipole = [dip(-1), dip(0), dip(1)];
        Ok(MoleculeModel { spec: *spec, ground, excited, dipole })
    }

    /// Indices of the F = 1 ground levels in M order (−1, 0, +1).
    pub fn ground_f1(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ground.len()).filter(|&k| self.ground[k].f == HalfInt::ONE).collect();
        idx.sort_by_key(|&k| self.ground[k].m);
        idx
    }

    /// The F = 1 ground energy E_gr.
    pub fn e_gr(&self) -> f64 {
        let idx = self.ground_f1();
        idx.iter().map(|&k| self.ground[k].energy).sum::<f64>() / idx.len() as f64
    }

    /// Indices of the excited levels belonging to a manifold, in M order.
    pub fn manifold_indices(&self, m: Manifold) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.excited.len()).filter(|&k| self.excited[k].manifold == m).collect();
        idx.sort_by_key(|&k| self.excited[k].m);
        idx
    }

    /// Energy of an excited manifold (average over its M members).
    pub fn manifold_energy(&self, m: Manifold) -> Option<f64> {
        let idx = self.manifold_indices(m);
        if idx.is_empty() {
            return None;
        }
        Some(idx.iter().map(|&k| self.excited[k].energy).sum::<f64>() / idx.len() as f64)
    }

    /// Transition frequency from the F = 1 ground level to manifold `m`.
    pub fn transition(&self, m: Manifold) -> Option<f64> {
        Some(self.manifold_energy(m)? - self.e_gr())
    }

    /// Excited manifolds that are dipole coupled to the F = 1 ground level.
    pub fn coupled_manifolds(&self) -> Vec<Manifold> {
        let mut ms: Vec<Manifold> = self.excited.iter().map(|l| l.manifold).collect();
        ms.sort();
        ms.dedup();
        let g = self.ground_f1();
        ms.retain(|&m| {
            self.manifold_indices(m)
                .iter()
                .any(|&e| g.iter().any(|&gi| (0..3).any(|q| self.dipole[q][(e, gi)].abs() > 1e-12)))
        });
        ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn manifold_sizes() {
        let i = HalfInt::from_twice(3);
        assert_eq!(manifold_basis(0, i).len(), 8);
        assert_eq!(manifold_basis(1, i).len(), 24);
        let lv = build_and_diagonalize(1, &MoleculeSpec::cacl()).unwrap();
        assert_eq!(lv.len(), 24);
        let count = |f: i32| lv.iter().filter(|l| l.f == HalfInt::int(f)).count();
        assert_eq!([count(0), count(1), count(2), count(3)], [1, 6, 10, 7]);
    }

    #[test]
    fn cacl_reference_energies() {
        let cf = closed_form_levels(&MoleculeSpec::cacl()).unwrap();
        assert_relative_eq!(cf.e_gr, -29.316425, epsilon = 1e-9);
        assert_relative_eq!(cf.e0, 9121.104765, epsilon = 1e-9);
    }

    #[test]
    fn numeric_levels_match_closed_forms() {
        let spec = MoleculeSpec::cacl();
        let cf = closed_form_levels(&spec).unwrap();
        let model = MoleculeModel::new(&spec).unwrap();
        for m in model.coupled_manifolds() {
            let e = model.manifold_energy(m).unwrap();
            assert_relative_eq!(e, cf.energy(m).unwrap(), max_relative = 1e-12);
        }
        assert_relative_eq!(model.e_gr(), cf.e_gr, max_relative = 1e-12);
    }

    #[test]
    fn off_diagonal_j_element_is_v3() {
        let spec = MoleculeSpec::cacl();
        let cf = closed_form_levels(&spec).unwrap();
        let i = spec.nuclear_spin;
        for (f, v3) in [(1, cf.v1[2]), (2, cf.v2[2])] {
            let a = BasisLabel::new(1, HalfInt::HALF, i, HalfInt::int(f), HalfInt::ZERO);
            let b = BasisLabel::new(1, HalfInt::from_twice(3), i, HalfInt::int(f), HalfInt::ZERO);
            assert_relative_eq!(hm_element(&a, &b, &spec), v3, max_relative = 1e-12);
        }
    }

    #[test]
    fn selection_rules() {
        let spec = MoleculeSpec::cacl();
        let i = spec.nuclear_spin;
        let a = BasisLabel::new(1, HalfInt::HALF, i, HalfInt::int(1), HalfInt::ZERO);
        let b = BasisLabel::new(1, HalfInt::HALF, i, HalfInt::int(2), HalfInt::ZERO);
        let c = BasisLabel::new(1, HalfInt::HALF, i, HalfInt::int(1), HalfInt::ONE);
        assert_eq!(hm_element(&a, &b, &spec), 0.0);
        assert_eq!(hm_element(&a, &c, &spec), 0.0);
        let g = BasisLabel::new(0, HalfInt::HALF, i, HalfInt::int(1), HalfInt::ZERO);
        // ΔM = q selection
        assert_eq!(dipole_element(&c, 0, &g), 0.0);
        assert!(dipole_element(&c, 1, &g).abs() > 0.0);
        // F = 3 is not reached from F = 1
        for m in HalfInt::int(3).projections() {
            for q in -1..=1 {
                for jt in [1, 3] {
                    let e = BasisLabel::new(1, HalfInt::from_twice(jt), i, HalfInt::int(3), m);
                    if e.is_valid() {
                        for mg in HalfInt::ONE.projections() {
                            let g = BasisLabel::new(0, HalfInt::HALF, i, HalfInt::ONE, mg);
                            assert_eq!(dipole_element(&e, q, &g), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mixing_angles_and_identities() {
        let spec = MoleculeSpec::cacl();
        let cf = closed_form_levels(&spec).unwrap();
        assert_relative_eq!(cf.phi1_plus - cf.phi1_minus, PI);
        assert_relative_eq!(cf.phi2_plus - cf.phi2_minus, PI);
        assert_relative_eq!(cf.e1_minus + cf.e1_plus, cf.v1[0] + cf.v1[1], max_relative = 1e-14);
        assert_relative_eq!(cf.e2_minus + cf.e2_plus, cf.v2[0] + cf.v2[1], max_relative = 1e-14);
        let c2 = cf.c_factor(Manifold::excited(2, Branch::Minus)).unwrap();
        assert!((c2 - 1.6513).abs() < 1e-4, "{c2}");
    }

    #[test]
    fn unsupported_spin() {
        let mut spec = MoleculeSpec::cacl();
        spec.nuclear_spin = HalfInt::HALF;
        assert_eq!(closed_form_levels(&spec), Err(Error::UnsupportedSpin(1)));
    }

    #[test]
    fn manifold_tags_round_trip() {
        for t in ["0", "1-", "1+", "2-", "2+", "3", "gr"] {
            assert_eq!(Manifold::parse(t).unwrap().to_string(), t);
        }
        assert!(Manifold::parse("x").is_err());
    }
}
