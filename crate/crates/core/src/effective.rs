//! Second-order effective interactions in the F = 1 ground manifold of a
//! molecule pair dressed by microwave fields.
//!
//! Pair operators act on |M₁⟩|M₂⟩ with M ordered (−1, 0, +1) for each
//! molecule, row-major in (M₁, M₂). Energies are in kHz unless noted.

use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::{Complex, DVector, Matrix3, SMatrix, SVector};

use crate::angular::{wigner_d1, EulerAngles};
use crate::error::{Error, Result};
use crate::molecule::{closed_form_levels, Manifold, MoleculeModel};
use crate::pairpot::{manifold_branches, PairSystem};

pub type C64 = Complex<f64>;
pub type Mat9 = SMatrix<C64, 9, 9>;
pub type Vec9 = SVector<C64, 9>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Spherical polarization amplitudes (α₋, α₀, α₊) of e = Σ α_q ê_q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarization(pub [C64; 3]);

impl Polarization {
    pub fn new(minus: C64, zero: C64, plus: C64) -> Self {
        Polarization([minus, zero, plus])
    }

    /// Along the intermolecular axis.
    pub fn z() -> Self {
        Polarization([ZERO, C64::new(1.0, 0.0), ZERO])
    }

    pub fn x() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Polarization([C64::new(h, 0.0), ZERO, C64::new(-h, 0.0)])
    }

    pub fn y() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Polarization([C64::new(0.0, h), ZERO, C64::new(0.0, h)])
    }

    /// Spherical components of a Cartesian vector (ê_{±1} = ∓(x̂ ± iŷ)/√2).
    pub fn from_cartesian(v: [C64; 3]) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let i = C64::new(0.0, 1.0);
        Polarization([(v[0] + i * v[1]) * h, v[2], -(v[0] - i * v[1]) * h])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) {
            return Err(Error::Domain("polarization vector is zero".into()));
        }
        Ok(Polarization(self.0.map(|a| a / n)))
    }

    pub fn is_z(&self) -> bool {
        self.0[0].norm() == 0.0 && self.0[2].norm() == 0.0
    }
}

/// One dressing field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrowaveField {
    /// |Ω| in kHz.
    pub rabi_khz: f64,
    /// Carrier frequency in MHz, measured from the F = 1 ground-pair energy
    /// 2E_gr (so that a field is resonant with a pair eigenstate when
    /// carrier = E_n − 2E_gr).
    pub carrier_mhz: f64,
    pub polarization: Polarization,
}

impl MicrowaveField {
    /// Carrier anchored to a manifold transition E^(k) − E_gr plus an offset.
    pub fn anchored(model: &MoleculeModel, anchor: Manifold, offset_khz: f64, rabi_khz: f64, pol: Polarization) -> Result<Self> {
        let t = model
            .transition(anchor)
            .ok_or_else(|| Error::Config(format!("unknown anchor manifold {anchor}")))?;
        Ok(MicrowaveField { rabi_khz, carrier_mhz: t + offset_khz * 1e-3, polarization: pol })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi_khz >= 0.0) || !self.carrier_mhz.is_finite() {
            return Err(Error::Domain("field needs a finite carrier and non-negative Rabi frequency".into()));
        }
        if (self.polarization.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("polarization must be normalized".into()));
        }
        Ok(())
    }
}

/// A field specified the way field-set files and Table-style listings do:
/// a Rabi frequency and an offset from one manifold's transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchoredField {
    pub rabi_khz: f64,
    pub anchor: Manifold,
    pub offset_khz: f64,
    pub polarization: Polarization,
}

impl AnchoredField {
    pub fn new(rabi_khz: f64, anchor: Manifold, offset_khz: f64, polarization: Polarization) -> Self {
        AnchoredField { rabi_khz, anchor, offset_khz, polarization }
    }

    pub fn resolve(&self, model: &MoleculeModel) -> Result<MicrowaveField> {
        MicrowaveField::anchored(model, self.anchor, self.offset_khz, self.rabi_khz, self.polarization)
    }
}

/// A 9×9 operator on two spin-1 ground manifolds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOperator {
    pub matrix: Mat9,
}

impl PairOperator {
    pub fn zero() -> Self {
        PairOperator { matrix: Mat9::zeros() }
    }

    pub fn identity() -> Self {
        PairOperator { matrix: Mat9::identity() }
    }

    pub fn new(matrix: Mat9) -> Self {
        PairOperator { matrix }
    }

    /// a ⊗ b.
    pub fn kron(a: &Matrix3<C64>, b: &Matrix3<C64>) -> Self {
        PairOperator { matrix: Mat9::from_fn(|r, c| a[(r / 3, c / 3)] * b[(r % 3, c % 3)]) }
    }

    pub fn adjoint(&self) -> Self {
        PairOperator { matrix: self.matrix.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn traceless(&self) -> Self {
        let t = self.trace() / 9.0;
        PairOperator { matrix: self.matrix - Mat9::identity() * t }
    }

    pub fn scale(&self, s: f64) -> Self {
        PairOperator { matrix: self.matrix * C64::new(s, 0.0) }
    }

    /// Largest |entry| of the imaginary part.
    pub fn max_imag(&self) -> f64 {
        self.matrix.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Largest magnitude of a matrix element that changes M₁ + M₂.
    pub fn off_block_norm(&self) -> f64 {
        let m = |k: usize| (k / 3) as i32 + (k % 3) as i32;
        let mut w: f64 = 0.0;
        for r in 0..9 {
            for c in 0..9 {
                if m(r) != m(c) {
                    w = w.max(self.matrix[(r, c)].norm());
                }
            }
        }
        w
    }
}

impl Add for PairOperator {
    type Output = PairOperator;
    fn add(self, o: PairOperator) -> PairOperator {
        PairOperator { matrix: self.matrix + o.matrix }
    }
}

impl Sub for PairOperator {
    type Output = PairOperator;
    fn sub(self, o: PairOperator) -> PairOperator {
        PairOperator { matrix: self.matrix - o.matrix }
    }
}

impl AddAssign for PairOperator {
    fn add_assign(&mut self, o: PairOperator) {
        self.matrix += o.matrix;
    }
}

impl Mul for PairOperator {
    type Output = PairOperator;
    fn mul(self, o: PairOperator) -> PairOperator {
        PairOperator { matrix: self.matrix * o.matrix }
    }
}

/// Spin-1 matrices (S^x, S^y, S^z) in the (−1, 0, +1) basis.
pub fn spin1_matrices() -> [Matrix3<C64>; 3] {
    let r = std::f64::consts::SQRT_2;
    let mut sp = Matrix3::<C64>::zeros();
    sp[(1, 0)] = C64::new(r, 0.0);
    sp[(2, 1)] = C64::new(r, 0.0);
    let sm = sp.adjoint();
    let sx = (sp + sm) * C64::new(0.5, 0.0);
    let sy = (sp - sm) * C64::new(0.0, -0.5);
    let sz = Matrix3::from_diagonal(&nalgebra::Vector3::new(C64::new(-1.0, 0.0), ZERO, C64::new(1.0, 0.0)));
    [sx, sy, sz]
}

/// S₁·S₂ on the 9-dimensional pair space.
pub fn heisenberg() -> PairOperator {
    let s = spin1_matrices();
    PairOperator::kron(&s[0], &s[0]) + PairOperator::kron(&s[1], &s[1]) + PairOperator::kron(&s[2], &s[2])
}

/// Dressed pair eigenstates at one separation together with the dipole
/// amplitudes b_{n,q} = ⟨ψ_n|V_q|g_a g_b⟩ for unit polarization ê_q.
/// Only eigenstates coupled to the F = 1 ground pair are retained.
#[derive(Debug, Clone)]
pub struct PairSpectrum {
    pub r_nm: f64,
    pub u_mhz: f64,
    /// 2E_gr in MHz.
    pub ground_pair_energy: f64,
    pub states: Vec<DressedState>,
}

#[derive(Debug, Clone)]
pub struct DressedState {
    /// Pair energy E_n in MHz.
    pub energy: f64,
    pub m_tot2: i32,
    pub sigma: i8,
    pub index: usize,
    /// Indexed by q + 1.
    pub amplitudes: [SVector<f64, 9>; 3],
}

impl PairSpectrum {
    pub fn new(sys: &PairSystem, r_nm: f64) -> Result<Self> {
        let u = sys.u(r_nm)?;
        let model = &sys.model;
        let g1 = model.ground_f1();
        let e_gr = model.e_gr();
        let d = &model.dipole;
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let mut states = Vec::new();
        for blk in &sys.blocks {
            // amplitudes of each block ket |g,e;σ⟩ for V_q acting on |a b⟩
            let mut ket_amp: Vec<[SVector<f64, 9>; 3]> = vec![[SVector::zeros(); 3]; blk.states.len()];
            let mut any = false;
            for (k, st) in blk.states.iter().enumerate() {
                let sig = st.sigma as f64;
                for (ia, &ga) in g1.iter().enumerate() {
                    for (ib, &gb) in g1.iter().enumerate() {
                        for q in 0..3 {
                            let mut v = 0.0;
                            if st.ground == ga {
                                v += d[q][(st.excited, gb)];
                            }
                            if st.ground == gb {
                                v += sig * d[q][(st.excited, ga)];
                            }
                            if v != 0.0 {
                                ket_amp[k][q][ia * 3 + ib] = v * inv;
                                any = true;
                            }
                        }
                    }
                }
            }
            if !any {
                continue;
            }
            let (e, vecs) = blk.eigen(u);
            for n in 0..e.len() {
                let mut amps = [SVector::<f64, 9>::zeros(); 3];
                for (k, ka) in ket_amp.iter().enumerate() {
                    let c = vecs[(k, n)];
                    if c == 0.0 {
                        continue;
                    }
                    for q in 0..3 {
                        amps[q] += ka[q] * c;
                    }
                }
                let mag = amps.iter().map(|a| a.amax()).fold(0.0, f64::max);
                if mag > 1e-13 {
                    states.push(DressedState {
                        energy: e[n],
                        m_tot2: blk.m_tot2,
                        sigma: blk.sigma,
                        index: n,
                        amplitudes: amps,
                    });
                }
            }
        }
        Ok(PairSpectrum { r_nm, u_mhz: u, ground_pair_energy: 2.0 * e_gr, states })
    }

    fn amplitude(st: &DressedState, pol: &Polarization) -> Vec9 {
        let mut out = Vec9::zeros();
        for q in 0..3 {
            let a = pol.0[q];
            if a == ZERO {
                continue;
            }
            for k in 0..9 {
                out[k] += a * st.amplitudes[q][k];
            }
        }
        out
    }

    /// Detuning (MHz) of a field from dressed state `st`.
    pub fn detuning_mhz(&self, field: &MicrowaveField, st: &DressedState) -> f64 {
        field.carrier_mhz - (st.energy - self.ground_pair_energy)
    }

    fn singular(&self, field: &MicrowaveField) -> Option<Error> {
        self.states.iter().find_map(|st| {
            let det = self.detuning_mhz(field, st);
            (det.abs() < 1e-6).then(|| Error::Singularity {
                what: format!(
                    "field at {:.6} MHz resonant with pair state (2M={}, σ={}, #{}) at r={} nm",
                    field.carrier_mhz, st.m_tot2, st.sigma, st.index, self.r_nm
                ),
                detuning_mhz: det,
            })
        })
    }

    /// Second-order sum over all dressed eigenstates for
    /// one field, in kHz.
    pub fn field_contribution(&self, field: &MicrowaveField) -> Result<PairOperator> {
        field.validate()?;
        if let Some(e) = self.singular(field) {
            return Err(e);
        }
        let pre = field.rabi_khz * field.rabi_khz / 4.0;
        let mut h = Mat9::zeros();
        for st in &self.states {
            let det_khz = self.detuning_mhz(field, st) * 1e3;
            let b = Self::amplitude(st, &field.polarization);
            let w = pre / det_khz;
            for r in 0..9 {
                let br = b[r].conj() * w;
                if br == ZERO {
                    continue;
                }
                for c in 0..9 {
                    h[(r, c)] += br * b[c];
                }
            }
        }
        Ok(PairOperator { matrix: h })
    }

    /// Largest saturation (Ω/2)|⟨ψ_n|V|g_a g_b⟩|/|Δ_n| over states and ground pairs.
    pub fn max_saturation(&self, field: &MicrowaveField) -> f64 {
        let mut m: f64 = 0.0;
        for st in &self.states {
            let det_khz = self.detuning_mhz(field, st).abs() * 1e3;
            let b = Self::amplitude(st, &field.polarization);
            let amax = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
            m = m.max(field.rabi_khz / 2.0 * amax / det_khz);
        }
        m
    }
}

/// H_eff at separation `r_nm` summed over fields (no cross-field terms), kHz.
pub fn effective_pair_hamiltonian(fields: &[MicrowaveField], spectrum: &PairSpectrum) -> Result<PairOperator> {
    let mut h = PairOperator::zero();
    for f in fields {
        h += spectrum.field_contribution(f)?;
    }
    Ok(h)
}

/// Coupling matrices A^(k)_j(e) of one excited manifold, stored through
/// polarization-independent amplitudes so that any polarization is cheap.
#[derive(Debug, Clone)]
pub struct ManifoldCoupling {
    pub manifold: Manifold,
    /// Normalization c_k (1, C/36 or C).
    pub norm: f64,
    pub branches: Vec<BranchCoupling>,
}

#[derive(Debug, Clone)]
pub struct BranchCoupling {
    pub j: usize,
    /// Energy shift coefficient in units of u(r) (includes C).
    pub coefficient: f64,
    /// Per eigenvector, amplitudes ⟨ψ|V_q|a b⟩ indexed by q + 1.
    pub amplitudes: Vec<[SVector<f64, 9>; 3]>,
}

impl BranchCoupling {
    pub fn degeneracy(&self) -> usize {
        self.amplitudes.len()
    }
}

impl ManifoldCoupling {
    pub fn new(model: &MoleculeModel, manifold: Manifold) -> Result<Self> {
        let cf = closed_form_levels(&model.spec)?;
        let norm = cf
            .coupling_norm(manifold)
            .ok_or_else(|| Error::Domain(format!("no coupling matrices for manifold {manifold}")))?;
        let g1 = model.ground_f1();
        let eidx = model.manifold_indices(manifold);
        let ne = eidx.len();
        let d = &model.dipole;
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let branches = manifold_branches(model, manifold)?
            .into_iter()
            .map(|b| {
                let amplitudes = b
                    .vectors
                    .iter()
                    .map(|(sigma, vec)| {
                        let sig = *sigma as f64;
                        let mut amps = [SVector::<f64, 9>::zeros(); 3];
                        for g in 0..3 {
                            for (ie, &e) in eidx.iter().enumerate() {
                                let c = vec[g * ne + ie];
                                for q in 0..3 {
                                    for x in 0..3 {
                                        // ⟨g,e;σ|V_q|a b⟩ = (δ_ga D(e,b) + σ D(e,a) δ_gb)/√2
                                        amps[q][g * 3 + x] += c * inv * d[q][(e, g1[x])];
                                        amps[q][x * 3 + g] += c * inv * sig * d[q][(e, g1[x])];
                                    }
                                }
                            }
                        }
                        amps
                    })
                    .collect();
                BranchCoupling { j: b.j, coefficient: b.coefficient, amplitudes }
            })
            .collect();
        Ok(ManifoldCoupling { manifold, norm, branches })
    }

    pub fn branch(&self, j: usize) -> Result<&BranchCoupling> {
        self.branches
            .iter()
            .find(|b| b.j == j)
            .ok_or_else(|| Error::Domain(format!("manifold {} has no branch {j}", self.manifold)))
    }

    /// A^(k)_j(e).
    pub fn matrix(&self, j: usize, pol: &Polarization) -> Result<PairOperator> {
        let b = self.branch(j)?;
        let mut m = Mat9::zeros();
        for amps in &b.amplitudes {
            let mut a = Vec9::zeros();
            for q in 0..3 {
                for k in 0..9 {
                    a[k] += pol.0[q] * amps[q][k];
                }
            }
            m += a.conjugate() * a.transpose();
        }
        Ok(PairOperator { matrix: m / C64::new(self.norm, 0.0) })
    }
}

/// All coupling matrices of the manifolds dipole coupled to F = 1.
#[derive(Debug, Clone)]
pub struct CouplingCatalogue {
    pub manifolds: Vec<ManifoldCoupling>,
}

impl CouplingCatalogue {
    pub fn new(model: &MoleculeModel) -> Result<Self> {
        let manifolds = model
            .coupled_manifolds()
            .into_iter()
            .map(|m| ManifoldCoupling::new(model, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(CouplingCatalogue { manifolds })
    }

    pub fn manifold(&self, m: Manifold) -> Result<&ManifoldCoupling> {
        self.manifolds
            .iter()
            .find(|x| x.manifold == m)
            .ok_or_else(|| Error::Domain(format!("manifold {m} is not dipole coupled to the F=1 ground level")))
    }

    pub fn coupling_matrix(&self, manifold: Manifold, j: usize, pol: &Polarization) -> Result<PairOperator> {
        self.manifold(manifold)?.matrix(j, pol)
    }
}

/// One term s·A^(k)_j(e) of the asymptotic effective Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldWeight {
    pub manifold: Manifold,
    pub branch: usize,
    pub saturation: f64,
    pub polarization: Polarization,
}

/// Σ s_j A_j(e_F); multiply by ħ|Ω|/4 for the interaction in kHz.
pub fn asymptotic_effective_hamiltonian(weights: &[FieldWeight], cat: &CouplingCatalogue) -> Result<PairOperator> {
    let mut h = PairOperator::zero();
    for w in weights {
        if !w.saturation.is_finite() {
            return Err(Error::Domain("saturation weight must be finite".into()));
        }
        h += cat.coupling_matrix(w.manifold, w.branch, &w.polarization)?.scale(w.saturation);
    }
    Ok(h)
}

/// Asymptotic saturation amplitude s^(k)_j(r) = Ω·c_k/Δ_j with
/// Δ_j = carrier − (E^(k) − E_gr + C·coef_j·u(r)).
pub fn saturation_amplitude(
    field: &MicrowaveField,
    manifold: Manifold,
    branch: usize,
    r_nm: f64,
    cat: &CouplingCatalogue,
    model: &MoleculeModel,
) -> Result<f64> {
    let mc = cat.manifold(manifold)?;
    let b = mc.branch(branch)?;
    let u = crate::pairpot::u_mhz(r_nm, model.spec.dipole_debye);
    let t = model
        .transition(manifold)
        .ok_or_else(|| Error::Domain(format!("unknown manifold {manifold}")))?;
    let det_khz = (field.carrier_mhz - (t + b.coefficient * u)) * 1e3;
    if det_khz == 0.0 {
        return Err(Error::Singularity {
            what: format!("field exactly resonant with branch {branch} of manifold {manifold}"),
            detuning_mhz: 0.0,
        });
    }
    Ok(field.rabi_khz * mc.norm / det_khz)
}

/// Convenience wrapper that builds the dressed spectrum at `r_nm` first.
pub fn effective_pair_hamiltonian_at(fields: &[MicrowaveField], r_nm: f64, sys: &PairSystem) -> Result<PairOperator> {
    let sp = PairSpectrum::new(sys, r_nm)?;
    effective_pair_hamiltonian(fields, &sp)
}

/// Asymptotic interaction of a field set in kHz: every field contributes
/// (Ω/4) Σ s_j A_j over all coupled manifolds and branches.
pub fn asymptotic_field_hamiltonian(
    fields: &[MicrowaveField],
    r_nm: f64,
    cat: &CouplingCatalogue,
    model: &MoleculeModel,
) -> Result<PairOperator> {
    let mut h = PairOperator::zero();
    for f in fields {
        f.validate()?;
        for mc in &cat.manifolds {
            for b in &mc.branches {
                let s = saturation_amplitude(f, mc.manifold, b.j, r_nm, cat, model)?;
                h += mc.matrix(b.j, &f.polarization)?.scale(s * f.rabi_khz / 4.0);
            }
        }
    }
    Ok(h)
}

/// Message when the interaction is not small compared with the ground
/// hyperfine splitting 2(b + c/3), which the F = 1 truncation assumes.
pub fn validity_warning(op: &PairOperator, model: &MoleculeModel) -> Option<String> {
    let split_khz = 2.0 * (model.spec.b_fermi + model.spec.c_dip / 3.0) * 1e3;
    let ev = eigenvalues(&op.traceless());
    let n = ev.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    (n > 0.01 * split_khz).then(|| {
        format!("interaction norm {n:.3} kHz is not small against the ground hyperfine splitting {split_khz:.0} kHz")
    })
}

/// Spin-1 rotation in the (−1, 0, +1) ordering used by pair operators.
pub fn rotation_matrix(angles: EulerAngles) -> Matrix3<C64> {
    let d = wigner_d1(angles);
    Matrix3::from_fn(|r, c| d[(2 - r, 2 - c)])
}

/// Rotates a polarization vector by D¹(angles)†.
pub fn rotate_polarization(pol: &Polarization, angles: EulerAngles) -> Polarization {
    let d = rotation_matrix(angles).adjoint();
    let v = nalgebra::Vector3::from(pol.0);
    let w = d * v;
    Polarization([w[0], w[1], w[2]])
}

/// D¹⊗D¹ · op · (D¹⊗D¹)†.
pub fn rotate_operator(op: &PairOperator, angles: EulerAngles) -> PairOperator {
    let d = rotation_matrix(angles);
    let dd = PairOperator::kron(&d, &d);
    dd * *op * dd.adjoint()
}

/// Frame rotation of a polarization-dependent interaction:
/// A(e) → D¹⊗D¹ A(D¹† e) D¹†⊗D¹†.
pub fn rotate_interaction<F>(interaction: F, angles: EulerAngles, pol: &Polarization) -> Result<PairOperator>
where
    F: Fn(&Polarization) -> Result<PairOperator>,
{
    let inner = interaction(&rotate_polarization(pol, angles))?;
    Ok(rotate_operator(&inner, angles))
}

/// Convenience: Hermitian-part eigenvalues of a pair operator (ascending).
pub fn eigenvalues(op: &PairOperator) -> DVector<f64> {
    let h = (op.matrix + op.matrix.adjoint()) * C64::new(0.5, 0.0);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}
