//! Distance of designed interactions from the bilinear-biquadratic family
//! and a multi-start optimizer for microwave field sets.
//!
//! The error of an interaction H is
//! min over U > 0, θ of ‖H − H_θ(U)‖ / ‖H_θ(U)‖ with ‖·‖ the spectral norm of
//! the traceless part. Writing t = 1/U this is min ‖tH − h(θ)‖/‖h(θ)‖ with
//! h(θ) = H_θ(1), convex in t for fixed θ and equal to 1 at t = 0, so the
//! error never exceeds 1.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::bbq_unchecked;
use crate::effective::{
    heisenberg, validity_warning, AnchoredField, Polarization, PairOperator, PairSpectrum, C64,
};
use crate::error::{Error, Result};
use crate::molecule::{Branch, Manifold};
use crate::pairpot::PairSystem;

type RMat9 = SMatrix<f64, 9, 9>;

const BLOCKS: [&[usize]; 5] = [&[0], &[1, 3], &[2, 4, 6], &[5, 7], &[8]];

/// Target H_θ = U(cosθ S·S + sinθ (S·S)²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetModel {
    pub theta: f64,
    pub u: f64,
}

impl TargetModel {
    pub fn new(theta: f64, u: f64) -> Result<Self> {
        if !(u > 0.0) {
            return Err(Error::Domain(format!("target strength must be positive, got {u}")));
        }
        Ok(TargetModel { theta, u })
    }

    pub fn operator(&self) -> PairOperator {
        bbq_unchecked(self.theta, self.u)
    }
}

/// Eigenvalues of a real symmetric matrix that conserves M₁ + M₂.
fn block_eigenvalues(m: &RMat9) -> [f64; 9] {
    let mut out = [0.0; 9];
    out[0] = m[(0, 0)];
    out[8] = m[(8, 8)];
    for (k, &(i, j)) in [(1usize, 3usize), (5, 7)].iter().enumerate() {
        let (a, d, b) = (m[(i, i)], m[(j, j)], m[(i, j)]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        out[1 + 2 * k] = mean - rad;
        out[2 + 2 * k] = mean + rad;
    }
    let idx = BLOCKS[2];
    let b3 = Matrix3::from_fn(|r, c| m[(idx[r], idx[c])]);
    let ev = b3.symmetric_eigenvalues();
    out[5] = ev[0];
    out[6] = ev[1];
    out[7] = ev[2];
    out
}

fn spread_norm(ev: &[f64]) -> f64 {
    let mean = ev.iter().sum::<f64>() / ev.len() as f64;
    ev.iter().fold(0.0, |m, x| m.max((x - mean).abs()))
}

fn real_block_form(op: &PairOperator) -> Option<RMat9> {
    (op.max_imag() == 0.0 && op.off_block_norm() == 0.0).then(|| RMat9::from_fn(|r, c| op.matrix[(r, c)].re))
}

/// Eigenvalues of the Hermitian part of a pair operator.
pub fn hermitian_eigenvalues(op: &PairOperator) -> Vec<f64> {
    let mut v: Vec<f64> = match real_block_form(op) {
        Some(m) => block_eigenvalues(&m).to_vec(),
        None => {
            let h = (op.matrix + op.matrix.adjoint()) * C64::new(0.5, 0.0);
            h.symmetric_eigenvalues().iter().copied().collect()
        }
    };
    v.sort_by(f64::total_cmp);
    v
}

/// Spectral norm of O − Tr[O]/9.
pub fn traceless_operator_norm(op: &PairOperator) -> f64 {
    spread_norm(&hermitian_eigenvalues(op))
}

/// Traceless norm of h(θ) from its total-spin eigenvalues.
fn target_norm(theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    spread_norm(&[-2.0 * c + 4.0 * s, -c + s, -c + s, -c + s, c + s, c + s, c + s, c + s, c + s])
}

/// Orthonormal isotropic directions (O₁, O₂).
pub fn isotropic_basis() -> (PairOperator, PairOperator) {
    let ss = heisenberg();
    let o1 = ss.scale(1.0 / (2.0 * 3f64.sqrt()));
    let o2 = (ss + (ss * ss).scale(2.0) - PairOperator::identity().scale(8.0 / 3.0)).scale(1.0 / (2.0 * 5f64.sqrt()));
    (o1, o2)
}

/// Result of projecting onto the isotropic plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicFit {
    pub u: f64,
    /// None when U' vanishes.
    pub theta: Option<f64>,
}

/// U' cosθ' = Tr[O₁†H], U' sinθ' = Tr[O₂†H].
pub fn isotropic_projection(op: &PairOperator) -> IsotropicFit {
    let (o1, o2) = isotropic_basis();
    let p1 = (o1.adjoint() * *op).trace().re;
    let p2 = (o2.adjoint() * *op).trace().re;
    let u = p1.hypot(p2);
    let scale = op.max_abs().max(f64::MIN_POSITIVE);
    IsotropicFit { u, theta: (u > 1e-14 * scale).then(|| p2.atan2(p1)) }
}

/// Aspect ratio of the ellipse traced in (cosθ, sinθ) by a fixed projected
/// length U', from the projection map evaluated numerically.
pub fn projection_aspect_ratio() -> f64 {
    let (o1, o2) = isotropic_basis();
    let ss = heisenberg();
    let ss2 = ss * ss;
    let tr = |a: &PairOperator, b: &PairOperator| (a.adjoint() * *b).trace().re;
    let m = Matrix2::new(tr(&o1, &ss), tr(&o1, &ss2), tr(&o2, &ss), tr(&o2, &ss2));
    let sv = m.singular_values();
    sv.min() / sv.max()
}

fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Precomputed pieces for repeated error evaluations of one interaction.
struct ErrorKernel {
    h: PairOperator,
    real: Option<RMat9>,
    ss: RMat9,
    ss2: RMat9,
    h_norm: f64,
}

impl ErrorKernel {
    fn new(h: &PairOperator) -> Self {
        let ssop = heisenberg();
        let ss = RMat9::from_fn(|r, c| ssop.matrix[(r, c)].re);
        let ss2 = ss * ss;
        ErrorKernel { h: *h, real: real_block_form(h), ss, ss2, h_norm: traceless_operator_norm(h) }
    }

    fn distance(&self, t: f64, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        match &self.real {
            Some(m) => spread_norm(&block_eigenvalues(&(m * t - self.ss * c - self.ss2 * s))),
            None => traceless_operator_norm(&(self.h.scale(t) - bbq_unchecked(theta, 1.0))),
        }
    }

    /// (relative error, t) at fixed θ.
    fn at_theta(&self, theta: f64) -> (f64, f64) {
        let hn = target_norm(theta);
        let tmax = 2.0 * hn / self.h_norm;
        let (t, d) = golden(|t| self.distance(t, theta), 0.0, tmax, 60);
        let e = d / hn;
        if e < 1.0 {
            (e, t)
        } else {
            (1.0, 0.0)
        }
    }
}

/// Outcome of a design-error evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignError {
    pub error: f64,
    /// Closest target; U is 0 when no finite strength beats the trivial bound.
    pub closest: TargetModel,
    /// Set when H is (numerically) zero or orthogonal to every target.
    pub zero_target: bool,
}

fn is_negligible(h: &PairOperator, norm: f64) -> bool {
    !(norm > 1e-12 * h.max_abs()) || norm == 0.0
}

/// Relative distance to the closest H_θ, with θ and U free.
pub fn design_error(h: &PairOperator) -> DesignError {
    let k = ErrorKernel::new(h);
    if is_negligible(h, k.h_norm) {
        return DesignError { error: 1.0, closest: TargetModel { theta: 0.0, u: 0.0 }, zero_target: true };
    }
    let n = 72;
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let mut seeds: Vec<f64> = (0..n).map(|i| -std::f64::consts::PI + step * i as f64).collect();
    if let Some(th) = isotropic_seed(h) {
        seeds.push(th);
    }
    let scan: Vec<(f64, f64)> = seeds.iter().map(|&th| (th, k.at_theta(th).0)).collect();
    // refine the three best scan points
    let mut order: Vec<usize> = (0..scan.len()).collect();
    order.sort_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1).then(a.cmp(&b)));
    let mut best = (scan[order[0]].0, scan[order[0]].1);
    for &i in order.iter().take(3) {
        let th0 = scan[i].0;
        let (th, e) = golden(|th| k.at_theta(th).0, th0 - step, th0 + step, 50);
        if e < best.1 {
            best = (th, e);
        }
    }
    let theta = wrap_angle(best.0);
    let (error, t) = k.at_theta(theta);
    if t == 0.0 {
        return DesignError { error: 1.0, closest: TargetModel { theta, u: 0.0 }, zero_target: true };
    }
    DesignError { error, closest: TargetModel { theta, u: 1.0 / t }, zero_target: false }
}

/// Relative distance to the closest H_θ at a fixed θ (U free), with that U.
pub fn design_error_at(h: &PairOperator, theta: f64) -> (f64, f64) {
    let k = ErrorKernel::new(h);
    if is_negligible(h, k.h_norm) {
        return (1.0, 0.0);
    }
    let (e, t) = k.at_theta(theta);
    (e, if t > 0.0 { 1.0 / t } else { 0.0 })
}

fn isotropic_seed(h: &PairOperator) -> Option<f64> {
    let (o1, o2) = isotropic_basis();
    let p1 = (o1 * *h).trace().re;
    let p2 = (o2 * *h).trace().re;
    let us = p2 / 5f64.sqrt();
    let uc = 0.5 * (p1 / 3f64.sqrt() + us);
    (us != 0.0 || uc != 0.0).then(|| us.atan2(uc))
}

fn wrap_angle(a: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let mut x = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if x <= -std::f64::consts::PI {
        x += tau;
    }
    x
}

/// Evaluated field set.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub fields: Vec<AnchoredField>,
    pub dz_nm: f64,
    /// Interactions at dz, 2dz, ... (kHz).
    pub interactions: Vec<PairOperator>,
    pub fitted: TargetModel,
    pub nn_error: f64,
    pub nnn_ratio: f64,
    /// Third-neighbour ratio when at least three ranges were evaluated.
    pub n3_ratio: Option<f64>,
    /// Largest (Ω/2)|⟨ψ_n|V|g g⟩|/|Δ_n| over fields, states and separations.
    pub max_saturation: f64,
    pub zero_target: bool,
    pub warnings: Vec<String>,
}

impl DesignResult {
    pub fn h_nn(&self) -> &PairOperator {
        &self.interactions[0]
    }

    pub fn h_nnn(&self) -> &PairOperator {
        &self.interactions[1]
    }

    pub fn h_3n(&self) -> Option<&PairOperator> {
        self.interactions.get(2)
    }
}

/// Dressed spectra at dz, 2dz, ... shared by evaluations of many field sets.
#[derive(Debug, Clone)]
pub struct DesignContext {
    pub dz_nm: f64,
    pub spectra: Vec<PairSpectrum>,
    /// Per separation, (E_n − 2E_gr in MHz, ẑ amplitude vector) of states with
    /// nonzero ẑ coupling.
    z_states: Vec<Vec<(f64, SVector<f64, 9>)>>,
    transitions: Vec<(Manifold, f64)>,
    /// 2(b + c/3) in kHz.
    hyperfine_khz: f64,
    model: crate::molecule::MoleculeModel,
}

impl DesignContext {
    pub fn new(sys: &PairSystem, dz_nm: f64, ranges: usize) -> Result<Self> {
        if ranges < 2 {
            return Err(Error::Precondition(format!("need at least two ranges, got {ranges}")));
        }
        if !(dz_nm > 0.0) {
            return Err(Error::Domain(format!("lattice spacing must be positive, got {dz_nm}")));
        }
        let spectra = (1..=ranges)
            .into_par_iter()
            .map(|k| PairSpectrum::new(sys, dz_nm * k as f64))
            .collect::<Result<Vec<_>>>()?;
        let z_states = spectra
            .iter()
            .map(|sp| {
                sp.states
                    .iter()
                    .filter(|st| st.amplitudes[1].amax() > 1e-13)
                    .map(|st| (st.energy - sp.ground_pair_energy, st.amplitudes[1]))
                    .collect()
            })
            .collect();
        let model = sys.model.clone();
        let transitions = model
            .coupled_manifolds()
            .into_iter()
            .filter_map(|m| model.transition(m).map(|t| (m, t)))
            .collect();
        let hyperfine_khz = 2.0 * (model.spec.b_fermi + model.spec.c_dip / 3.0) * 1e3;
        Ok(DesignContext { dz_nm, spectra, z_states, transitions, hyperfine_khz, model })
    }

    pub fn ranges(&self) -> usize {
        self.spectra.len()
    }

    fn transition(&self, m: Manifold) -> Result<f64> {
        self.transitions
            .iter()
            .find(|(x, _)| *x == m)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("manifold {m} is not a valid anchor")))
    }

    /// Interaction at each separation, naming the separation on resonance.
    pub fn interactions(&self, fields: &[AnchoredField]) -> Result<Vec<PairOperator>> {
        let resolved = fields.iter().map(|f| f.resolve(&self.model)).collect::<Result<Vec<_>>>()?;
        self.spectra
            .iter()
            .enumerate()
            .map(|(k, sp)| {
                crate::effective::effective_pair_hamiltonian(&resolved, sp).map_err(|e| match e {
                    Error::Singularity { what, detuning_mhz } => Error::Singularity {
                        what: format!("at separation {}·dz = {} nm: {what}", k + 1, sp.r_nm),
                        detuning_mhz,
                    },
                    other => other,
                })
            })
            .collect()
    }

    pub fn max_saturation(&self, fields: &[AnchoredField]) -> Result<f64> {
        let mut m: f64 = 0.0;
        for f in fields {
            let mf = f.resolve(&self.model)?;
            for sp in &self.spectra {
                m = m.max(sp.max_saturation(&mf));
            }
        }
        Ok(m)
    }

    /// Full evaluation of a field set.
    pub fn evaluate(&self, fields: &[AnchoredField]) -> Result<DesignResult> {
        let interactions = self.interactions(fields)?;
        let mut warnings = Vec::new();
        let de = design_error(&interactions[0]);
        let n1 = traceless_operator_norm(&interactions[0]);
        let ratio = |h: &PairOperator| if n1 > 0.0 { traceless_operator_norm(h) / n1 } else { 0.0 };
        let nnn_ratio = ratio(&interactions[1]);
        let n3_ratio = interactions.get(2).map(ratio);
        let max_saturation = self.max_saturation(fields)?;
        if de.zero_target {
            warnings.push("nearest-neighbour interaction has no isotropic component".to_string());
        }
        if max_saturation > 0.1 {
            warnings.push(format!("saturation {max_saturation:.3} exceeds 0.1; second-order treatment is marginal"));
        }
        if let Some(w) = validity_warning(&interactions[0], &self.model) {
            warnings.push(w);
        }
        Ok(DesignResult {
            fields: fields.to_vec(),
            dz_nm: self.dz_nm,
            interactions,
            fitted: de.closest,
            nn_error: de.error,
            nnn_ratio,
            n3_ratio,
            max_saturation,
            zero_target: de.zero_target,
            warnings,
        })
    }

    /// ẑ-only interactions from carriers (MHz above 2E_gr) and Rabi
    /// frequencies, together with the largest saturation; None on a resonance.
    fn z_interactions(&self, carriers: &[f64], rabi: &[f64]) -> Option<(Vec<RMat9>, f64)> {
        let mut out = Vec::with_capacity(self.z_states.len());
        let mut sat: f64 = 0.0;
        for states in &self.z_states {
            let mut h = RMat9::zeros();
            for (e, b) in states {
                let mut w = 0.0;
                let bmax = b.amax();
                for (c, r) in carriers.iter().zip(rabi) {
                    let det = c - e;
                    if det.abs() < 1e-6 {
                        return None;
                    }
                    w += r * r / (4.0 * det * 1e3);
                    sat = sat.max(0.5 * r * bmax / (det.abs() * 1e3));
                }
                for i in 0..9 {
                    let bi = b[i] * w;
                    if bi != 0.0 {
                        for j in 0..9 {
                            h[(i, j)] += bi * b[j];
                        }
                    }
                }
            }
            out.push(h);
        }
        Some((out, sat))
    }
}

/// Evaluate a field set at separations dz, 2dz, ..., ranges·dz.
pub fn evaluate_design(fields: &[AnchoredField], sys: &PairSystem, dz_nm: f64, ranges: usize) -> Result<DesignResult> {
    DesignContext::new(sys, dz_nm, ranges)?.evaluate(fields)
}

/// Search space for field parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBounds {
    /// Offsets stay within ±offset_khz of the anchor transition.
    pub offset_khz: f64,
    /// Rabi ratios to the first field stay within e^{±log_rabi_ratio}.
    pub log_rabi_ratio: f64,
    /// Restrict to ẑ polarization.
    pub z_only: bool,
    /// Allowed anchors.
    pub anchors: Vec<Manifold>,
    /// Final Rabi frequencies are scaled so the largest saturation equals this.
    pub saturation_cap: f64,
}

impl Default for FieldBounds {
    fn default() -> Self {
        FieldBounds {
            offset_khz: 400.0,
            log_rabi_ratio: 3.0,
            z_only: true,
            anchors: vec![
                Manifold::excited(0, Branch::Single),
                Manifold::excited(1, Branch::Minus),
                Manifold::excited(1, Branch::Plus),
                Manifold::excited(2, Branch::Minus),
                Manifold::excited(2, Branch::Plus),
            ],
            saturation_cap: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub seed: u64,
    /// Weights of nn error at the target θ, nnn ratio and third-neighbour ratio.
    pub weights: [f64; 3],
    /// Objective evaluations per local search.
    pub max_evals: usize,
    /// Designs whose interaction at unit saturation falls below this fraction
    /// of u(dz) are penalized; this keeps the search away from fields parked
    /// on a resonance, which trivially suppress longer-range terms.
    pub min_strength_fraction: f64,
    pub bounds: FieldBounds,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { starts: 32, seed: 1, weights: [1.0, 0.5, 0.5], max_evals: 1500, min_strength_fraction: 0.01, bounds: FieldBounds::default() }
    }
}

const PENALTY: f64 = 1e3;

struct Problem<'a> {
    ctx: &'a DesignContext,
    theta: f64,
    anchors: Vec<Manifold>,
    base: Vec<f64>,
    cfg: &'a OptimizerConfig,
    /// Required ‖H_nn‖ at unit saturation, kHz.
    min_strength: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.anchors.len()
    }

    fn dim(&self) -> usize {
        let n = self.n();
        if self.cfg.bounds.z_only {
            2 * n - 1
        } else {
            2 * n - 1 + 6 * n
        }
    }

    fn decode(&self, p: &[f64]) -> Vec<AnchoredField> {
        let n = self.n();
        let b = &self.cfg.bounds;
        (0..n)
            .map(|i| {
                let offset = b.offset_khz * p[i].tanh();
                let rabi = if i == 0 { 1.0 } else { (b.log_rabi_ratio * p[n + i - 1].tanh()).exp() };
                let pol = if b.z_only {
                    Polarization::z()
                } else {
                    let o = 2 * n - 1 + 6 * i;
                    let c = |k: usize| C64::new(p[o + 2 * k], p[o + 2 * k + 1]);
                    Polarization::new(c(0), c(1), c(2)).normalized().unwrap_or_else(|_| Polarization::z())
                };
                AnchoredField::new(rabi, self.anchors[i], offset, pol)
            })
            .collect()
    }

    fn objective(&self, p: &[f64]) -> f64 {
        let fields = self.decode(p);
        let w = self.cfg.weights;
        let (ops, sat): (Vec<PairOperator>, f64) = if self.cfg.bounds.z_only {
            let carriers: Vec<f64> = fields.iter().zip(&self.base).map(|(f, t)| t + f.offset_khz * 1e-3).collect();
            let rabi: Vec<f64> = fields.iter().map(|f| f.rabi_khz).collect();
            match self.ctx.z_interactions(&carriers, &rabi) {
                Some((hs, sat)) => (hs.iter().map(|h| PairOperator::new(h.map(|x| C64::new(x, 0.0)))).collect(), sat),
                None => return PENALTY,
            }
        } else {
            match (self.ctx.interactions(&fields), self.ctx.max_saturation(&fields)) {
                (Ok(v), Ok(sat)) => (v, sat),
                _ => return PENALTY,
            }
        };
        let n1 = traceless_operator_norm(&ops[0]);
        if !(n1 > 0.0) || !n1.is_finite() || !(sat > 0.0) {
            return PENALTY;
        }
        let (err, _) = design_error_at(&ops[0], self.theta);
        let mut f = w[0] * err + w[1] * traceless_operator_norm(&ops[1]) / n1;
        if let Some(h3) = ops.get(2) {
            f += w[2] * traceless_operator_norm(h3) / n1;
        }
        // strength reachable at unit saturation, against the bare dipole scale
        let strength = n1 / (sat * sat * self.min_strength);
        if strength < 1.0 {
            f += 1.0 - strength;
        }
        f
    }
}

/// Minimal Nelder–Mead with adaptive coefficients.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() <= 1e-11 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let mut c = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for k in 0..n {
                c[k] += x[k] / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| c[k] + t * (simplex[n].0[k] - c[k])).collect() };
        let xr = along(-alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-alpha * rho);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = along(rho);
                let fx = f(&x);
                (x, fx)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for k in 0..n {
                        s.0[k] = best[k] + sigma * (s.0[k] - best[k]);
                    }
                    s.1 = f(&s.0);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

impl Problem<'_> {
    fn encode(&self, fields: &[AnchoredField]) -> Vec<f64> {
        let n = self.n();
        let b = &self.cfg.bounds;
        let at = |x: f64| x.clamp(-0.999_999, 0.999_999).atanh();
        let mut p = vec![0.0; self.dim()];
        for (i, f) in fields.iter().enumerate() {
            p[i] = at(f.offset_khz / b.offset_khz);
            if i > 0 {
                p[n + i - 1] = at((f.rabi_khz / fields[0].rabi_khz).ln() / b.log_rabi_ratio);
            }
            if !b.z_only {
                let o = 2 * n - 1 + 6 * i;
                for k in 0..3 {
                    p[o + 2 * k] = f.polarization.0[k].re;
                    p[o + 2 * k + 1] = f.polarization.0[k].im;
                }
            }
        }
        p
    }

    fn local_search(&self, x0: &[f64]) -> (f64, Vec<f64>) {
        let obj = |p: &[f64]| self.objective(p);
        let (mut x, mut fx) = nelder_mead(&obj, x0, 0.4, self.cfg.max_evals);
        // restarts shake the simplex loose from ridges of the spectral norm
        for step in [0.1, 0.02] {
            let (x2, f2) = nelder_mead(&obj, &x, step, self.cfg.max_evals / 2);
            if f2 < fx {
                x = x2;
                fx = f2;
            }
        }
        (fx, x)
    }
}

/// Lawson–Hanson non-negative least squares, min ‖Ax − y‖ with x ≥ 0.
fn nnls(a: &DMatrix<f64>, y: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve = |passive: &[bool]| -> (Vec<usize>, DVector<f64>) {
        let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
        let sub = a.select_columns(idx.iter());
        let z = sub.clone().svd(true, true).solve(y, 1e-12).unwrap_or_else(|_| DVector::zeros(idx.len()));
        (idx, z)
    };
    for _ in 0..max_iter {
        let w = a.transpose() * (y - a * &x);
        let cand = (0..n).filter(|&k| !passive[k] && w[k] > 1e-12 * (1.0 + w.amax())).max_by(|&p, &q| w[p].total_cmp(&w[q]));
        let Some(k) = cand else { break };
        passive[k] = true;
        loop {
            let (idx, z) = solve(&passive);
            if z.iter().all(|&v| v > 0.0) {
                for (m, &k) in idx.iter().enumerate() {
                    x[k] = z[m];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (m, &k) in idx.iter().enumerate() {
                if z[m] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[m]));
                }
            }
            for (m, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z[m] - x[k]);
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// A candidate ẑ carrier with its per-separation interaction for unit Ω².
struct Candidate {
    anchor: Manifold,
    offset_khz: f64,
    ops: Vec<RMat9>,
}

fn traceless_vec(m: &RMat9) -> impl Iterator<Item = f64> + '_ {
    let t = m.trace() / 9.0;
    (0..81).map(move |k| {
        let (r, c) = (k / 9, k % 9);
        m[(r, c)] - if r == c { t } else { 0.0 }
    })
}

impl DesignContext {
    /// ẑ carriers on a grid around each anchor, skipping those within
    /// `gap_khz` of a dressed state at any separation.
    fn candidates(&self, bounds: &FieldBounds, step_khz: f64, gap_khz: f64) -> Result<Vec<Candidate>> {
        let mut out = Vec::new();
        let n = (bounds.offset_khz / step_khz).floor() as i64;
        for &anchor in &bounds.anchors {
            let base = self.transition(anchor)?;
            for i in -n..=n {
                let offset_khz = i as f64 * step_khz;
                let carrier = base + offset_khz * 1e-3;
                let near = self.z_states.iter().flatten().any(|(e, _)| ((carrier - e) * 1e3).abs() < gap_khz);
                if near {
                    continue;
                }
                if let Some((ops, _)) = self.z_interactions(&[carrier], &[1.0]) {
                    out.push(Candidate { anchor, offset_khz, ops });
                }
            }
        }
        Ok(out)
    }
}

/// Sparse non-negative combination of candidate carriers approximating
/// h(θ) at dz while suppressing longer ranges (Frobenius proxy).
fn sparse_seed(cands: &[&Candidate], theta: f64, lambda: f64, n_fields: usize) -> Option<Vec<AnchoredField>> {
    if cands.len() < n_fields {
        return None;
    }
    let ranges = cands[0].ops.len();
    let rows = 81 * ranges;
    let target = bbq_unchecked(theta, 1.0);
    let treal = RMat9::from_fn(|r, c| target.matrix[(r, c)].re);
    let mut y = DVector::zeros(rows);
    for (k, v) in traceless_vec(&treal).enumerate() {
        y[k] = v;
    }
    let build = |sel: &[usize]| {
        let mut a = DMatrix::zeros(rows, sel.len());
        for (col, &ci) in sel.iter().enumerate() {
            for (rg, op) in cands[ci].ops.iter().enumerate() {
                let w = if rg == 0 { 1.0 } else { lambda };
                for (k, v) in traceless_vec(op).enumerate() {
                    a[(81 * rg + k, col)] = w * v;
                }
            }
        }
        a
    };
    let all: Vec<usize> = (0..cands.len()).collect();
    // normalise columns so that the selection is not biased to strong carriers
    let a = build(&all);
    let norms: Vec<f64> = (0..a.ncols()).map(|c| a.column(c).norm().max(f64::MIN_POSITIVE)).collect();
    let an = DMatrix::from_fn(rows, a.ncols(), |r, c| a[(r, c)] / norms[c]);
    let x = nnls(&an, &y, 4 * n_fields + 20);
    let mut order: Vec<usize> = (0..x.len()).filter(|&k| x[k] > 0.0).collect();
    if order.is_empty() {
        return None;
    }
    order.sort_by(|&p, &q| x[q].total_cmp(&x[p]).then(p.cmp(&q)));
    order.truncate(n_fields);
    while order.len() < n_fields {
        let extra = (0..cands.len()).find(|k| !order.contains(k))?;
        order.push(extra);
    }
    let sub = build(&order);
    let xs = nnls(&sub, &y, 50);
    let top = xs.amax();
    if !(top > 0.0) {
        return None;
    }
    Some(
        order
            .iter()
            .enumerate()
            .map(|(m, &ci)| {
                let rabi = (xs[m].max(1e-4 * top) / top).sqrt();
                AnchoredField::new(rabi, cands[ci].anchor, cands[ci].offset_khz, Polarization::z())
            })
            .collect(),
    )
}

/// Multi-start search for `n_fields` fields approximating H_θ at spacing dz.
///
/// Starts come from sparse non-negative fits of the target over a grid of
/// ẑ carriers (random subsets of the grid and random range penalties), each
/// refined by a simplex search on the actual objective. Interactions scale
/// uniformly with a global Rabi factor, so the search runs over offsets and
/// Rabi ratios; the final set is scaled so that the largest saturation equals
/// `bounds.saturation_cap`.
pub fn optimize_fields(theta: f64, n_fields: usize, ctx: &DesignContext, cfg: &OptimizerConfig) -> Result<DesignResult> {
    if n_fields == 0 {
        return Err(Error::Precondition("at least one field is required".into()));
    }
    if cfg.starts == 0 || cfg.bounds.anchors.is_empty() {
        return Err(Error::Precondition("optimizer needs at least one start and one anchor".into()));
    }
    let cands = ctx.candidates(&cfg.bounds, 2.0, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seeds: Vec<Vec<AnchoredField>> = Vec::with_capacity(cfg.starts);
    for s in 0..cfg.starts {
        let keep = if s == 0 { 1.0 } else { rng.random_range(0.2..0.8) };
        let lambda = if s == 0 { 1.0 } else { rng.random_range(0.2..2.0) };
        let subset: Vec<&Candidate> = cands.iter().filter(|_| s == 0 || rng.random::<f64>() < keep).collect();
        let mut fields = sparse_seed(&subset, theta, lambda, n_fields).unwrap_or_else(|| {
            (0..n_fields)
                .map(|_| {
                    let a = cfg.bounds.anchors[rng.random_range(0..cfg.bounds.anchors.len())];
                    AnchoredField::new(1.0, a, rng.random_range(-0.8..0.8) * cfg.bounds.offset_khz, Polarization::z())
                })
                .collect()
        });
        if !cfg.bounds.z_only {
            for f in &mut fields {
                let mut jitter = |x: C64| x + C64::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                let p = f.polarization.0;
                f.polarization = Polarization::new(jitter(p[0]), jitter(p[1]), jitter(p[2]));
            }
        }
        seeds.push(fields);
    }
    let runs: Vec<Result<(f64, Vec<AnchoredField>)>> = seeds
        .into_par_iter()
        .map(|fields| {
            let (fx, out) = refine(theta, &fields, ctx, cfg)?;
            Ok((fx, out))
        })
        .collect();
    let mut best: Option<(f64, Vec<AnchoredField>)> = None;
    for r in runs {
        let (f, fields) = r?;
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, fields));
        }
    }
    let (fbest, fields) = best.expect("at least one start");
    finish(fbest, fields, ctx, cfg)
}

/// Local refinement of a given field set (anchors fixed) toward θ.
pub fn refine_fields(theta: f64, fields: &[AnchoredField], ctx: &DesignContext, cfg: &OptimizerConfig) -> Result<DesignResult> {
    if fields.is_empty() {
        return Err(Error::Precondition("at least one field is required".into()));
    }
    let (f, out) = refine(theta, fields, ctx, cfg)?;
    finish(f, out, ctx, cfg)
}

fn refine(theta: f64, fields: &[AnchoredField], ctx: &DesignContext, cfg: &OptimizerConfig) -> Result<(f64, Vec<AnchoredField>)> {
    let anchors: Vec<Manifold> = fields.iter().map(|f| f.anchor).collect();
    let base = anchors.iter().map(|&m| ctx.transition(m)).collect::<Result<Vec<_>>>()?;
    let min_strength = cfg.min_strength_fraction * ctx.spectra[0].u_mhz * 1e3;
    let prob = Problem { ctx, theta, anchors, base, cfg, min_strength };
    let x0 = prob.encode(fields);
    let (fx, x) = prob.local_search(&x0);
    Ok((fx, prob.decode(&x)))
}

fn finish(fbest: f64, mut fields: Vec<AnchoredField>, ctx: &DesignContext, cfg: &OptimizerConfig) -> Result<DesignResult> {
    if fbest >= PENALTY {
        return Err(Error::NonConvergence { steps: cfg.starts, detail: "every start ended on a resonance".into() });
    }
    let sat = ctx.max_saturation(&fields)?;
    if sat > 0.0 {
        let scale = cfg.bounds.saturation_cap / sat;
        for f in &mut fields {
            f.rabi_khz *= scale;
        }
    }
    let res = ctx.evaluate(&fields)?;
    if res.nn_error >= 1.0 {
        return Err(Error::NonConvergence {
            steps: cfg.starts,
            detail: format!("best design has error {:.3} (objective {fbest:.4})", res.nn_error),
        });
    }
    Ok(res)
}

/// Checks the design is strong enough to matter compared with the F = 1
/// truncation (returns the ratio ‖H‖ / 2(b + c/3)).
pub fn hyperfine_ratio(res: &DesignResult, ctx: &DesignContext) -> f64 {
    traceless_operator_norm(res.h_nn()) / ctx.hyperfine_khz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::spin1_matrices;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    #[test]
    fn norms_of_simple_operators() {
        assert_eq!(traceless_operator_norm(&PairOperator::identity()), 0.0);
        let sz = spin1_matrices()[2];
        assert_relative_eq!(traceless_operator_norm(&PairOperator::kron(&sz, &sz)), 1.0, epsilon = 1e-14);
        assert_relative_eq!(traceless_operator_norm(&heisenberg()), 2.0, epsilon = 1e-14);
        // complex path agrees with block path
        let sx = spin1_matrices()[0];
        let op = PairOperator::kron(&sx, &sx);
        assert_relative_eq!(traceless_operator_norm(&op), 1.0, epsilon = 1e-12);
        for th in [0.3, 1.7, -2.5] {
            assert_relative_eq!(target_norm(th), traceless_operator_norm(&bbq_unchecked(th, 1.0)), epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_of_heisenberg() {
        let fit = isotropic_projection(&heisenberg());
        assert_relative_eq!(fit.u, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert!(fit.theta.unwrap().abs() < 1e-12);
        assert!(isotropic_projection(&PairOperator::identity()).theta.is_none());
        let expect = ((10.0 - 2.0 * 10f64.sqrt()) / (10.0 + 2.0 * 10f64.sqrt())).sqrt();
        assert_relative_eq!(projection_aspect_ratio(), expect, epsilon = 1e-12);
        assert!((projection_aspect_ratio() - 0.474).abs() < 5e-4);
    }

    #[test]
    fn exact_targets_have_zero_error() {
        for i in 0..64 {
            let th = -std::f64::consts::PI + (i as f64 + 0.5) * std::f64::consts::PI / 32.0;
            let de = design_error(&bbq_unchecked(th, 3.7));
            assert!(de.error < 1e-7, "θ={th}: {}", de.error);
            assert!((wrap_angle(de.closest.theta - th)).abs() < 1e-5);
            assert_relative_eq!(de.closest.u, 3.7, max_relative = 1e-5);
        }
    }

    #[test]
    fn single_body_perturbation_grows_linearly() {
        let sz = spin1_matrices()[2];
        let pert = PairOperator::kron(&sz, &Matrix3::identity());
        let h = bbq_unchecked(0.4, 1.0);
        let e1 = design_error(&(h + pert.scale(1e-3))).error;
        let e2 = design_error(&(h + pert.scale(2e-3))).error;
        assert!(e1 > 0.0);
        assert_relative_eq!(e2 / e1, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn zero_interaction_is_flagged() {
        let de = design_error(&PairOperator::zero());
        assert_eq!(de.error, 1.0);
        assert!(de.zero_target);
        let de = design_error(&PairOperator::identity().scale(5.0));
        assert!(de.zero_target);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden(|x| (x - 0.3) * (x - 0.3), 0.0, 1.0, 80);
        assert!((x - 0.3).abs() < 1e-8 && fx < 1e-15);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let (x, fx) = nelder_mead(&f, &[-1.2, 1.0], 0.5, 5000);
        assert!(fx < 1e-10, "{x:?}");
    }

    #[test]
    fn zero_fields_rejected_by_optimizer() {
        let sys = PairSystem::from_spec(&crate::molecule::MoleculeSpec::cacl()).unwrap();
        let ctx = DesignContext::new(&sys, 400.0, 2).unwrap();
        let r = optimize_fields(0.3, 0, &ctx, &OptimizerConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
        assert!(matches!(DesignContext::new(&sys, 400.0, 1), Err(Error::Precondition(_))));
        let empty = ctx.evaluate(&[]).unwrap();
        assert!(empty.zero_target);
        assert_eq!(*empty.h_nn(), PairOperator::zero());
    }
}
