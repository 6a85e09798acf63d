//! Spin-1 chains: exact diagonalization, iTEBD, correlators, structure
//! factors and time-of-flight noise correlations.
//!
//! Site states are ordered (−1, 0, +1) as for pair operators; a two-site
//! operator acts on |s_j⟩|s_{j+1}⟩ with index 3·s_j + s_{j+1}.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::effective::{heisenberg, spin1_matrices, PairOperator, C64};
use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// U(cosθ S·S + sinθ (S·S)²).
pub fn bilinear_biquadratic(theta: f64, u: f64) -> Result<PairOperator> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("bilinear-biquadratic strength must be positive, got {u}")));
    }
    Ok(bbq_unchecked(theta, u))
}

pub(crate) fn bbq_unchecked(theta: f64, u: f64) -> PairOperator {
    let ss = heisenberg();
    (ss.scale(theta.cos()) + (ss * ss).scale(theta.sin())).scale(u)
}

/// The operator exchanging two spin-1 sites.
pub fn swap_operator() -> PairOperator {
    let mut p = PairOperator::zero();
    for a in 0..3 {
        for b in 0..3 {
            p.matrix[(3 * a + b, 3 * b + a)] = ONE;
        }
    }
    p
}

/// exp(2πi S^z/3), the Z₃ clock operator.
pub fn clock_operator() -> Matrix3<C64> {
    let w = |m: f64| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * m / 3.0);
    Matrix3::from_diagonal(&nalgebra::Vector3::new(w(-1.0), w(0.0), w(1.0)))
}

pub fn sz() -> Matrix3<C64> {
    spin1_matrices()[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Open,
    Periodic,
}

/// Ground level of a finite chain: every state within the degeneracy
/// tolerance is kept and observables are averaged over them.
#[derive(Debug, Clone)]
pub struct FiniteState {
    pub n: usize,
    pub boundary: Boundary,
    pub energy: f64,
    /// Orthonormal ground-level vectors over the full 3^N space (site 0 is
    /// the most significant base-3 digit).
    pub multiplet: Vec<DVector<C64>>,
    /// Lowest energy above the ground level found by the solver, if any.
    pub next_energy: Option<f64>,
}

impl FiniteState {
    pub fn degeneracy(&self) -> usize {
        self.multiplet.len()
    }

    fn stride(&self, site: usize) -> usize {
        3usize.pow((self.n - 1 - site) as u32)
    }

    fn apply_site(&self, op: &Matrix3<C64>, site: usize, v: &DVector<C64>) -> DVector<C64> {
        let w = self.stride(site);
        let mut out = DVector::zeros(v.len());
        for (idx, &x) in v.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            let d = (idx / w) % 3;
            let base = idx - d * w;
            for dp in 0..3 {
                let m = op[(dp, d)];
                if m != ZERO {
                    out[base + dp * w] += m * x;
                }
            }
        }
        out
    }

    /// Multiplet average of ⟨A_i B_j⟩ (i ≠ j) or ⟨A_i B_i⟩.
    pub fn two_point(&self, a: &Matrix3<C64>, i: usize, b: &Matrix3<C64>, j: usize) -> C64 {
        let mut acc = ZERO;
        for psi in &self.multiplet {
            let phi = self.apply_site(a, i, &self.apply_site(b, j, psi));
            acc += psi.dotc(&phi);
        }
        acc / self.multiplet.len() as f64
    }

    /// Multiplet average of a two-site operator on sites (i, j).
    pub fn bond_expectation(&self, h: &PairOperator, i: usize, j: usize) -> C64 {
        let (wi, wj) = (self.stride(i), self.stride(j));
        let mut acc = ZERO;
        for psi in &self.multiplet {
            let mut e = ZERO;
            for (idx, &x) in psi.iter().enumerate() {
                if x == ZERO {
                    continue;
                }
                let (di, dj) = ((idx / wi) % 3, (idx / wj) % 3);
                let base = idx - di * wi - dj * wj;
                for p in 0..9 {
                    let m = h.matrix[(p, 3 * di + dj)];
                    if m != ZERO {
                        e += psi[base + (p / 3) * wi + (p % 3) * wj].conj() * m * x;
                    }
                }
            }
            acc += e;
        }
        acc / self.multiplet.len() as f64
    }
}

/// Field used by the sparse solver: real when the Hamiltonian is real.
trait Scalar: nalgebra::ComplexField<RealField = f64> + Copy {
    fn from_c64(z: C64) -> Self;
    fn to_c64(self) -> C64;
}

impl Scalar for f64 {
    fn from_c64(z: C64) -> Self {
        z.re
    }
    fn to_c64(self) -> C64 {
        C64::new(self, 0.0)
    }
}

impl Scalar for C64 {
    fn from_c64(z: C64) -> Self {
        z
    }
    fn to_c64(self) -> C64 {
        self
    }
}

/// Hamiltonian Σ_j h_{j,j+1} restricted to one S^z sector (or the full space).
struct SectorOperator<T> {
    n: usize,
    bonds: Vec<(usize, usize)>,
    h: PairOperator,
    /// Sorted base-3 codes of the sector; None means the full space.
    codes: Option<Vec<u32>>,
    /// Assembled matrix rows when small enough.
    csr: Option<(Vec<usize>, Vec<u32>, Vec<T>)>,
}

impl<T: Scalar> SectorOperator<T> {
    fn dim(&self) -> usize {
        self.codes.as_ref().map_or(3usize.pow(self.n as u32), |c| c.len())
    }

    fn code(&self, i: usize) -> u32 {
        self.codes.as_ref().map_or(i as u32, |c| c[i])
    }

    fn index(&self, code: u32) -> Option<usize> {
        match &self.codes {
            Some(c) => c.binary_search(&code).ok(),
            None => Some(code as usize),
        }
    }

    fn stride(&self, site: usize) -> u32 {
        3u32.pow((self.n - 1 - site) as u32)
    }

    /// Calls f(row, value) for each ⟨row|H|col⟩.
    fn column<F: FnMut(usize, T)>(&self, col: usize, mut f: F) {
        let code = self.code(col);
        let mut diag = ZERO;
        for &(i, j) in &self.bonds {
            let (wi, wj) = (self.stride(i), self.stride(j));
            let (di, dj) = ((code / wi) % 3, (code / wj) % 3);
            let p = (3 * di + dj) as usize;
            for q in 0..9 {
                let m = self.h.matrix[(q, p)];
                if m == ZERO {
                    continue;
                }
                if q == p {
                    diag += m;
                    continue;
                }
                let nc = code - di * wi - dj * wj + (q as u32 / 3) * wi + (q as u32 % 3) * wj;
                if let Some(r) = self.index(nc) {
                    f(r, T::from_c64(m));
                }
            }
        }
        if diag != ZERO {
            f(col, T::from_c64(diag));
        }
    }

    fn assemble(&mut self) {
        let dim = self.dim();
        let mut ptr = Vec::with_capacity(dim + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0);
        // rows of H† = H: store column entries conjugated
        for c in 0..dim {
            self.column(c, |r, m| {
                idx.push(r as u32);
                val.push(m.conjugate());
            });
            ptr.push(idx.len());
        }
        self.csr = Some((ptr, idx, val));
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        match &self.csr {
            Some((ptr, idx, val)) => {
                for (r, yr) in y.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for k in ptr[r]..ptr[r + 1] {
                        acc += val[k] * x[idx[k] as usize];
                    }
                    *yr = acc;
                }
            }
            None => {
                y.fill(T::zero());
                for (c, &xc) in x.iter().enumerate() {
                    if xc == T::zero() {
                        continue;
                    }
                    self.column(c, |r, m| y[r] += m * xc);
                }
            }
        }
    }

    fn dense(&self) -> DMatrix<T> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            self.column(c, |r, v| m[(r, c)] += v);
        }
        m
    }
}

/// Removes from y its components along the first k columns of `q` (two
/// classical Gram–Schmidt passes).
fn orthogonalize<T: Scalar>(q: &DMatrix<T>, k: usize, y: &mut DVector<T>) {
    if k == 0 {
        return;
    }
    let qs = q.columns(0, k);
    for _ in 0..2 {
        let c = qs.ad_mul(&*y);
        y.gemv(-T::one(), &qs, &c, T::one());
    }
}

/// Lowest eigenpairs, stopping once an eigenvalue exceeds `cutoff`
/// (the first one above is returned as the second element).
fn lowest_eigenpairs<T: Scalar>(
    op: &SectorOperator<T>,
    cutoff: impl Fn(f64) -> f64,
    max_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<(f64, DVector<T>)>, Option<f64>)> {
    let dim = op.dim();
    if dim <= 400 {
        let eig = nalgebra::SymmetricEigen::new(op.dense());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let cut = cutoff(eig.eigenvalues[order[0]]);
        let mut out = Vec::new();
        for &k in &order {
            let e = eig.eigenvalues[k];
            if e > cut || out.len() == max_pairs {
                return Ok((out, Some(e)));
            }
            out.push((e, eig.eigenvectors.column(k).into_owned()));
        }
        return Ok((out, None));
    }
    let bytes = std::mem::size_of::<T>() as f64;
    let krylov = ((4.0e8 / (bytes * dim as f64)) as usize).clamp(24, 100);
    // columns: locked vectors first, then the current Krylov basis
    let mut q = DMatrix::<T>::zeros(dim, max_pairs + krylov + 1);
    let mut energies: Vec<f64> = Vec::new();
    let mut cut = f64::INFINITY;
    let mut y = DVector::<T>::zeros(dim);
    const RESTARTS: usize = 400;
    loop {
        let nl = energies.len();
        let mut start =
            DVector::<T>::from_fn(dim, |_, _| T::from_c64(C64::new(rng.random::<f64>() - 0.5, 0.0)));
        let mut converged = None;
        for _restart in 0..RESTARTS {
            orthogonalize(&q, nl, &mut start);
            let nrm = start.norm();
            if nrm < 1e-300 {
                break;
            }
            q.set_column(nl, &(&start / T::from_real(nrm)));
            let mut alpha = Vec::new();
            let mut beta: Vec<f64> = Vec::new();
            let m = krylov.min(dim - nl);
            for k in 0..m {
                let v = q.column(nl + k).into_owned();
                op.apply(v.as_slice(), y.as_mut_slice());
                alpha.push(v.dotc(&y).real());
                orthogonalize(&q, nl + k + 1, &mut y);
                let b = y.norm();
                beta.push(b);
                if k + 1 == m || b < 1e-12 {
                    break;
                }
                q.set_column(nl + k + 1, &(&y / T::from_real(b)));
            }
            let kdim = alpha.len();
            let t = DMatrix::from_fn(kdim, kdim, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = nalgebra::SymmetricEigen::new(t);
            let k0 = (0..kdim).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
            let theta = eig.eigenvalues[k0];
            let s = eig.eigenvectors.column(k0).map(T::from_real);
            let mut ritz = q.columns(nl, kdim) * s;
            let estimate = (beta[kdim - 1] * eig.eigenvectors[(kdim - 1, k0)]).abs();
            let tol = 1e-10 * theta.abs().max(1.0);
            if estimate < tol {
                // confirm with an explicit residual
                let nrm = ritz.norm();
                ritz /= T::from_real(nrm);
                op.apply(ritz.as_slice(), y.as_mut_slice());
                let e = ritz.dotc(&y).real();
                y.axpy(T::from_real(-e), &ritz, T::one());
                if y.norm() < tol {
                    converged = Some((e, ritz));
                    break;
                }
            }
            start = ritz;
        }
        let Some((e, v)) = converged else {
            return Err(Error::NonConvergence {
                steps: RESTARTS,
                detail: format!("Lanczos restarts in a sector of dimension {dim}"),
            });
        };
        if energies.is_empty() {
            cut = cutoff(e);
        }
        let locked = |q: &DMatrix<T>, energies: &[f64]| -> Vec<(f64, DVector<T>)> {
            energies.iter().enumerate().map(|(k, &e)| (e, q.column(k).into_owned())).collect()
        };
        if e > cut || nl == max_pairs {
            return Ok((locked(&q, &energies), Some(e)));
        }
        q.set_column(nl, &v);
        energies.push(e);
        if energies.len() == dim {
            return Ok((locked(&q, &energies), None));
        }
    }
}

type Eigenpairs = (Vec<(f64, DVector<C64>)>, Option<f64>);

/// Lowest states of one sector, embedded in the full space.
fn solve_sector<T: Scalar>(
    h2: &PairOperator,
    n: usize,
    bonds: &[(usize, usize)],
    codes: Option<Vec<u32>>,
    best: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Eigenpairs> {
    let mut op = SectorOperator::<T> { n, bonds: bonds.to_vec(), h: *h2, codes, csr: None };
    let dim = op.dim();
    if dim == 0 {
        return Ok((Vec::new(), None));
    }
    if dim * bonds.len() * 6 < 30_000_000 {
        op.assemble();
    }
    let (pairs, next) =
        lowest_eigenpairs(&op, |e0| e0.min(best) + DEGENERACY_TOL * e0.abs().max(1.0), 16, rng)?;
    let full = 3usize.pow(n as u32);
    let pairs = pairs
        .into_iter()
        .map(|(e, v)| {
            let mut w = DVector::<C64>::zeros(full);
            for (k, x) in v.iter().enumerate() {
                w[op.code(k) as usize] = x.to_c64();
            }
            (e, w)
        })
        .collect();
    Ok((pairs, next))
}

/// Tolerance for two energies to belong to one ground level.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Ground level of Σ_j h_{j,j+1} on N sites.
pub fn exact_ground_state(h2: &PairOperator, n: usize, boundary: Boundary) -> Result<(f64, FiniteState)> {
    if n < 2 {
        return Err(Error::Precondition(format!("chain needs at least two sites, got {n}")));
    }
    if n > 14 {
        return Err(Error::Resource(format!("exact diagonalization limited to 14 sites, got {n}")));
    }
    let mut bonds: Vec<(usize, usize)> = (0..n - 1).map(|j| (j, j + 1)).collect();
    if boundary == Boundary::Periodic && n > 2 {
        bonds.push((n - 1, 0));
    }
    let conserves = h2.off_block_norm() <= 1e-13 * h2.max_abs().max(1e-300);
    let full = 3usize.pow(n as u32);
    let sectors: Vec<Option<Vec<u32>>> = if conserves {
        let mut by_sz: Vec<Vec<u32>> = vec![Vec::new(); 2 * n + 1];
        for code in 0..full as u32 {
            let mut c = code;
            let mut s = 0usize;
            for _ in 0..n {
                s += (c % 3) as usize;
                c /= 3;
            }
            by_sz[s].push(code);
        }
        // small |S^z| first: they usually hold the ground level
        let mut order: Vec<usize> = (0..=2 * n).collect();
        order.sort_by_key(|&s| (s as i64 - n as i64).abs());
        order.into_iter().map(|s| Some(std::mem::take(&mut by_sz[s]))).collect()
    } else {
        vec![None]
    };
    let real = h2.max_imag() == 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut found: Vec<(f64, DVector<C64>)> = Vec::new();
    let mut above: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    for codes in sectors {
        let (pairs, next) = if real {
            solve_sector::<f64>(h2, n, &bonds, codes, best, &mut rng)?
        } else {
            solve_sector::<C64>(h2, n, &bonds, codes, best, &mut rng)?
        };
        above.extend(next);
        for (e, v) in pairs {
            best = best.min(e);
            found.push((e, v));
        }
    }
    let tol = DEGENERACY_TOL * best.abs().max(1.0);
    let mut multiplet = Vec::new();
    for (e, v) in found {
        if e <= best + tol {
            multiplet.push(v);
        } else {
            above.push(e);
        }
    }
    let next_energy = above.into_iter().filter(|&e| e > best + tol).reduce(f64::min);
    Ok((best, FiniteState { n, boundary, energy: best, multiplet, next_energy }))
}

/// Two-site-cell infinite MPS in the Γλ form with right-canonical site
/// tensors B = Γλ (one matrix per physical state) and the Schmidt spectra
/// on the two bonds; bond 0 sits left of site 0.
#[derive(Debug, Clone)]
pub struct InfiniteMps {
    pub tensors: [Vec<DMatrix<C64>>; 2],
    pub lambdas: [DVector<f64>; 2],
    pub chi: usize,
    /// Per-site energy and sweeps used.
    pub energy: f64,
    pub sweeps: usize,
    /// Largest change of a Schmidt spectrum over the last sweep.
    pub last_change: f64,
}

#[derive(Debug, Clone)]
pub enum ChainState {
    Finite(FiniteState),
    Infinite(InfiniteMps),
}

/// Imaginary-time schedule and stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ItebdOptions {
    /// (dτ, maximum sweeps) per stage in decreasing dτ.
    pub schedule: Vec<(f64, usize)>,
    /// Convergence threshold on the per-sweep change of the bond spectra.
    pub tol: f64,
    /// Discarded singular values below this are dropped outright.
    pub svd_cutoff: f64,
    pub seed: u64,
}

impl Default for ItebdOptions {
    fn default() -> Self {
        ItebdOptions {
            schedule: vec![(0.1, 2000), (0.03, 10000), (0.01, 40000)],
            tol: 1e-10,
            svd_cutoff: 1e-14,
            seed: 11,
        }
    }
}

fn hermitian_exp(h: &PairOperator, tau: f64) -> DMatrix<C64> {
    let m = DMatrix::from_fn(9, 9, |r, c| 0.5 * (h.matrix[(r, c)] + h.matrix[(c, r)].conj()));
    let eig = nalgebra::SymmetricEigen::new(m);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::new((-tau * e).exp(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

fn spectrum_change(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

impl InfiniteMps {
    fn product(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut site = || {
            let v: Vec<C64> = (0..3).map(|_| C64::new(rng.random::<f64>() + 0.1, rng.random::<f64>() - 0.5)).collect();
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| DMatrix::from_element(1, 1, z / n)).collect::<Vec<_>>()
        };
        let a = site();
        let b = site();
        InfiniteMps {
            tensors: [a, b],
            lambdas: [DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)],
            chi: 1,
            energy: f64::NAN,
            sweeps: 0,
            last_change: f64::INFINITY,
        }
    }

    /// Θ over sites (a, a+1) without the left Schmidt weights.
    fn phi(&self, a: usize) -> Vec<DMatrix<C64>> {
        let b = 1 - a;
        let mut out = Vec::with_capacity(9);
        for s1 in 0..3 {
            for s2 in 0..3 {
                out.push(&self.tensors[a][s1] * &self.tensors[b][s2]);
            }
        }
        out
    }

    /// ⟨h⟩ on the bond (a, a+1).
    pub fn bond_energy(&self, h: &PairOperator, a: usize) -> f64 {
        let phi = self.phi(a);
        let lam = &self.lambdas[a];
        let mut e = ZERO;
        for p in 0..9 {
            for q in 0..9 {
                let m = h.matrix[(p, q)];
                if m == ZERO {
                    continue;
                }
                let mut acc = ZERO;
                for (r, l) in lam.iter().enumerate() {
                    let l2 = l * l;
                    for c in 0..phi[p].ncols() {
                        acc += phi[p][(r, c)].conj() * phi[q][(r, c)] * l2;
                    }
                }
                e += m * acc;
            }
        }
        e.re
    }

    fn update(&mut self, gate: &DMatrix<C64>, a: usize, chi: usize, cutoff: f64) {
        let b = 1 - a;
        let phi = self.phi(a);
        let (cl, cr) = (phi[0].nrows(), phi[0].ncols());
        let mut gphi = vec![DMatrix::<C64>::zeros(cl, cr); 9];
        for p in 0..9 {
            for q in 0..9 {
                let g = gate[(p, q)];
                if g != ZERO {
                    gphi[p] += &phi[q] * g;
                }
            }
        }
        let lam = &self.lambdas[a];
        let mut theta = DMatrix::<C64>::zeros(3 * cl, 3 * cr);
        for s1 in 0..3 {
            for s2 in 0..3 {
                let m = &gphi[3 * s1 + s2];
                for r in 0..cl {
                    for c in 0..cr {
                        theta[(s1 * cl + r, s2 * cr + c)] = m[(r, c)] * lam[r];
                    }
                }
            }
        }
        let svd = theta.svd(false, true);
        let vt = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let total = svd.singular_values.norm();
        let keep: Vec<usize> =
            order.into_iter().filter(|&k| svd.singular_values[k] / total > cutoff).take(chi).collect();
        let s = DVector::from_iterator(keep.len(), keep.iter().map(|&k| svd.singular_values[k]));
        let snorm = s.norm();
        let newb: Vec<DMatrix<C64>> = (0..3)
            .map(|s2| DMatrix::from_fn(keep.len(), cr, |k, c| vt[(keep[k], s2 * cr + c)]))
            .collect();
        let newa: Vec<DMatrix<C64>> = (0..3)
            .map(|s1| {
                let mut m = DMatrix::<C64>::zeros(cl, keep.len());
                for s2 in 0..3 {
                    m += &gphi[3 * s1 + s2] * newb[s2].adjoint();
                }
                m / C64::new(snorm, 0.0)
            })
            .collect();
        self.tensors[a] = newa;
        self.tensors[b] = newb;
        self.lambdas[b] = s / snorm;
    }

    /// Restores the canonical form, which imaginary-time gates only keep
    /// approximately: the unit cell is gauged with the dominant fixed points
    /// of its transfer map and split again by an SVD.
    pub fn canonicalize(&mut self, cutoff: f64) {
        let cell: Vec<DMatrix<C64>> = self.phi(0);
        let chi = cell[0].nrows();
        let fixed_point = |left: bool, start: DMatrix<C64>| -> DMatrix<C64> {
            let mut x = start;
            for _ in 0..5000 {
                let mut y = DMatrix::<C64>::zeros(chi, chi);
                for c in &cell {
                    if left {
                        y += c.adjoint() * &x * c;
                    } else {
                        y += c * &x * c.adjoint();
                    }
                }
                y = (&y + y.adjoint()) * C64::new(0.5 / y.trace().re, 0.0);
                let change = (&y - &x).norm();
                x = y;
                if change < 1e-15 {
                    break;
                }
            }
            x
        };
        let r = fixed_point(false, DMatrix::identity(chi, chi) / C64::new(chi as f64, 0.0));
        let l = fixed_point(true, self.left_env(0));
        // R = X X†, L = Y† Y, dropping null directions
        let root = |m: DMatrix<C64>| -> (DMatrix<C64>, DVector<f64>) {
            let eig = nalgebra::SymmetricEigen::new(m);
            let top = eig.eigenvalues.max();
            let keep: Vec<usize> = (0..chi).filter(|&k| eig.eigenvalues[k] > cutoff * cutoff * top).collect();
            let u = DMatrix::from_fn(chi, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
            let d = DVector::from_iterator(keep.len(), keep.iter().map(|&k| eig.eigenvalues[k].sqrt()));
            (u, d)
        };
        let (ur, dr) = root(r);
        let (ul, dl) = root(l);
        let x = &ur * DMatrix::from_diagonal(&dr.map(|v| C64::new(v, 0.0)));
        let x_inv = DMatrix::from_diagonal(&dr.map(|v| C64::new(1.0 / v, 0.0))) * ur.adjoint();
        let y = DMatrix::from_diagonal(&dl.map(|v| C64::new(v, 0.0))) * ul.adjoint();
        let svd = (&y * &x).svd(true, true);
        let v = svd.v_t.expect("requested V^T").adjoint();
        let s = &svd.singular_values;
        let keep: Vec<usize> = (0..s.len()).filter(|&k| s[k] / s.max() > cutoff).collect();
        let v = DMatrix::from_fn(v.nrows(), keep.len(), |i, j| v[(i, keep[j])]);
        let lam0 = DVector::from_iterator(keep.len(), keep.iter().map(|&k| s[k]));
        let lam0 = &lam0 / lam0.norm();
        let g = v.adjoint() * &x_inv;
        let g_inv = &x * &v;
        let gauged: Vec<DMatrix<C64>> = cell.iter().map(|c| &g * c * &g_inv).collect();
        // normalize so Σ C C† = 1
        let mut norm = DMatrix::<C64>::zeros(keep.len(), keep.len());
        for c in &gauged {
            norm += c * c.adjoint();
        }
        let eta = norm.trace().re / keep.len() as f64;
        let gauged: Vec<DMatrix<C64>> = gauged.into_iter().map(|c| c / C64::new(eta.sqrt(), 0.0)).collect();
        self.lambdas[0] = lam0;
        let k = keep.len();
        // split the gauged cell by running the two-site update with an identity gate
        self.tensors[0] = (0..3)
            .map(|s1| {
                let mut m = DMatrix::<C64>::zeros(k, 3 * k);
                for s2 in 0..3 {
                    m.view_mut((0, s2 * k), (k, k)).copy_from(&gauged[3 * s1 + s2]);
                }
                m
            })
            .collect();
        self.tensors[1] = (0..3)
            .map(|s2| {
                let mut m = DMatrix::<C64>::zeros(3 * k, k);
                m.view_mut((s2 * k, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
                m
            })
            .collect();
        self.update(&DMatrix::identity(9, 9), 0, self.chi, cutoff);
    }

    /// One-site transfer with an operator: L → Σ O_{s's} B^{s'}† L B^{s}.
    fn transfer(&self, site: usize, l: &DMatrix<C64>, op: Option<&Matrix3<C64>>) -> DMatrix<C64> {
        let b = &self.tensors[site];
        let mut out = DMatrix::<C64>::zeros(b[0].ncols(), b[0].ncols());
        for s in 0..3 {
            let lb = l * &b[s];
            for sp in 0..3 {
                let w = match op {
                    Some(o) => o[(sp, s)],
                    None => {
                        if sp == s {
                            ONE
                        } else {
                            ZERO
                        }
                    }
                };
                if w != ZERO {
                    out += b[sp].adjoint() * &lb * w;
                }
            }
        }
        out
    }

    fn left_env(&self, site: usize) -> DMatrix<C64> {
        DMatrix::from_diagonal(&self.lambdas[site].map(|l| C64::new(l * l, 0.0)))
    }

    /// ⟨A_0 B_r⟩ starting on sublattice `site`, for r = 0..=rmax.
    fn two_point_series(&self, a: &Matrix3<C64>, b: &Matrix3<C64>, site: usize, rmax: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(rmax + 1);
        let l0 = self.left_env(site);
        let ab = a * b;
        out.push(self.transfer(site, &l0, Some(&ab)).trace());
        let mut l = self.transfer(site, &l0, Some(a));
        let mut s = 1 - site;
        for _ in 1..=rmax {
            out.push(self.transfer(s, &l, Some(b)).trace());
            l = self.transfer(s, &l, None);
            s = 1 - s;
        }
        out
    }

    /// Sublattice-averaged ⟨A_0 B_r⟩ for r = 0..=rmax.
    pub fn two_point(&self, a: &Matrix3<C64>, b: &Matrix3<C64>, rmax: usize) -> Vec<C64> {
        let x = self.two_point_series(a, b, 0, rmax);
        let y = self.two_point_series(a, b, 1, rmax);
        x.iter().zip(&y).map(|(p, q)| (p + q) * 0.5).collect()
    }

    pub fn one_point(&self, a: &Matrix3<C64>) -> C64 {
        let e0 = self.transfer(0, &self.left_env(0), Some(a)).trace();
        let e1 = self.transfer(1, &self.left_env(1), Some(a)).trace();
        (e0 + e1) * 0.5
    }

    /// Magnitude of the subleading eigenvalue of the two-site transfer map
    /// (power iteration with the dominant pair projected out).
    pub fn subleading_transfer_eigenvalue(&self) -> f64 {
        let chi = self.lambdas[0].len();
        if chi == 1 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = self.left_env(0);
        let project = |x: &mut DMatrix<C64>| {
            // remove the component along the fixed point: x → x − Tr(x)·ρ
            let t = x.trace();
            *x -= &rho * t;
        };
        let mut x = DMatrix::from_fn(chi, chi, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        project(&mut x);
        let mut norms = Vec::new();
        for _ in 0..300 {
            let y = self.transfer(1, &self.transfer(0, &x, None), None);
            let mut y = y;
            project(&mut y);
            let n = y.norm();
            norms.push(n);
            if n < 1e-300 {
                return 0.0;
            }
            x = y / C64::new(n, 0.0);
        }
        let k = norms.len();
        let tail = &norms[k - 50..];
        (tail.iter().map(|v| v.ln()).sum::<f64>() / tail.len() as f64).exp()
    }

    pub fn correlation_length(&self) -> f64 {
        let mu = self.subleading_transfer_eigenvalue();
        if mu <= 0.0 {
            0.0
        } else {
            -2.0 / mu.ln()
        }
    }

    /// Energy per site under a two-site interaction.
    pub fn energy_per_site(&self, h: &PairOperator) -> f64 {
        0.5 * (self.bond_energy(h, 0) + self.bond_energy(h, 1))
    }

    /// Structured dump of tensors and spectra.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            chi: usize,
            unit_cell: usize,
            energy_per_site: f64,
            sweeps: usize,
            last_spectrum_change: f64,
            lambdas: Vec<&'a [f64]>,
            /// [site][physical][row][col] = [re, im]
            tensors: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
        }
        let tensors = self
            .tensors
            .iter()
            .map(|site| {
                site.iter()
                    .map(|m| (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect())
                    .collect()
            })
            .collect();
        let d = Dump {
            chi: self.chi,
            unit_cell: 2,
            energy_per_site: self.energy,
            sweeps: self.sweeps,
            last_spectrum_change: self.last_change,
            lambdas: self.lambdas.iter().map(|l| l.as_slice()).collect(),
            tensors,
        };
        serde_json::to_string_pretty(&d).expect("plain data serializes")
    }
}

/// Imaginary-time evolution of a two-site-cell infinite MPS under Σ h_{j,j+1}.
pub fn itebd_ground_state(h2: &PairOperator, chi: usize, opts: &ItebdOptions) -> Result<InfiniteMps> {
    if chi == 0 {
        return Err(Error::Precondition("bond dimension must be at least 1".into()));
    }
    if opts.schedule.is_empty() {
        return Err(Error::Precondition("empty imaginary-time schedule".into()));
    }
    if opts.schedule.windows(2).any(|w| w[1].0 > w[0].0) || opts.schedule.iter().any(|s| !(s.0 > 0.0)) {
        return Err(Error::Precondition("time steps must be positive and non-increasing".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition(format!("convergence tolerance must be positive (got {})", opts.tol)));
    }
    let mut mps = InfiniteMps::product(opts.seed);
    mps.chi = chi;
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut sweeps = 0;
    let last_stage = opts.schedule.len() - 1;
    for (stage, &(dt, steps)) in opts.schedule.iter().enumerate() {
        // symmetric splitting: half step on even bonds around a full odd step
        let half = hermitian_exp(h2, 0.5 * dt);
        let full = hermitian_exp(h2, dt);
        let mut converged = false;
        for step in 0..steps {
            let old = mps.lambdas.clone();
            mps.update(&half, 0, chi, opts.svd_cutoff);
            mps.update(&full, 1, chi, opts.svd_cutoff);
            mps.update(&half, 0, chi, opts.svd_cutoff);
            sweeps += 1;
            let change = spectrum_change(&old[0], &mps.lambdas[0]).max(spectrum_change(&old[1], &mps.lambdas[1]));
            mps.last_change = change;
            if step % 500 == 0 {
                history.push((sweeps, mps.energy_per_site(h2)));
            }
            // wait a few sweeps so the bond dimension can grow from a product state
            if step > 10 && change < opts.tol {
                converged = true;
                break;
            }
        }
        if stage == last_stage && !converged {
            let tail: Vec<String> =
                history.iter().rev().take(6).rev().map(|(s, e)| format!("{s}:{e:.10}")).collect();
            return Err(Error::NonConvergence {
                steps: sweeps,
                detail: format!(
                    "bond spectrum still changing by {:.2e} per sweep at dτ={dt}; energy history {}",
                    mps.last_change,
                    tail.join(", ")
                ),
            });
        }
    }
    mps.canonicalize(opts.svd_cutoff);
    mps.sweeps = sweeps;
    mps.energy = mps.energy_per_site(h2);
    Ok(mps)
}

/// ⟨O_0 O_r†⟩ (interior pair for finite chains, sublattice average for MPS).
pub fn correlator(state: &ChainState, o: &Matrix3<C64>, r: usize) -> Result<C64> {
    let od = o.adjoint();
    match state {
        ChainState::Infinite(m) => Ok(m.two_point(o, &od, r)[r]),
        ChainState::Finite(f) => {
            if r >= f.n {
                return Err(Error::Domain(format!("separation {r} exceeds chain of {} sites", f.n)));
            }
            let i = (f.n - 1 - r) / 2;
            Ok(f.two_point(o, i, &od, i + r))
        }
    }
}

/// Static structure factor on a q grid.
#[derive(Debug, Clone)]
pub struct StructureFactor {
    pub q: Vec<f64>,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Grid of `n` points in (−π, π].
pub fn q_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
}

/// S_O(q) = (1/N) Σ_{j,j'} e^{iq(j−j')} ⟨O_j O_{j'}†⟩. Infinite chains use
/// the connected correlator (the disconnected part is a Bragg term at q = 0)
/// summed to |j − j'| ≤ cutoff with a geometric tail from the transfer map.
pub fn structure_factor(state: &ChainState, o: &Matrix3<C64>, q: &[f64], cutoff: usize) -> Result<StructureFactor> {
    let od = o.adjoint();
    let mut warnings = Vec::new();
    let values = match state {
        ChainState::Finite(f) => {
            let n = f.n;
            let mut corr = vec![vec![ZERO; n]; n];
            for j in 0..n {
                for jp in 0..n {
                    corr[j][jp] = f.two_point(o, j, &od, jp);
                }
            }
            q.iter()
                .map(|&qq| {
                    let mut s = ZERO;
                    for j in 0..n {
                        for jp in 0..n {
                            s += C64::from_polar(1.0, qq * (j as f64 - jp as f64)) * corr[j][jp];
                        }
                    }
                    s.re / n as f64
                })
                .collect()
        }
        ChainState::Infinite(m) => {
            if cutoff < 2 {
                return Err(Error::Precondition("structure factor cutoff must be at least 2".into()));
            }
            // C(d) = ⟨O†_0 O_d⟩ − |⟨O⟩|²
            let mean = m.one_point(o);
            let c: Vec<C64> = m.two_point(&od, o, cutoff).into_iter().map(|v| v - mean.conj() * mean).collect();
            let mu = m.subleading_transfer_eigenvalue();
            let tail_bound = (c[cutoff].norm() + c[cutoff - 1].norm()) * mu / (1.0 - mu).max(1e-300);
            if mu >= 1.0 - 1e-12 || tail_bound > 1e-6 {
                warnings.push(format!(
                    "correlations at the cutoff {cutoff} are not negligible (tail bound {tail_bound:.2e}); increase the cutoff"
                ));
            }
            q.iter()
                .map(|&qq| {
                    let mut s = c[0];
                    for (d, cd) in c.iter().enumerate().skip(1) {
                        s += C64::from_polar(2.0, qq * d as f64) * cd;
                    }
                    if mu > 0.0 && mu < 1.0 {
                        let z = C64::from_polar(mu, 2.0 * qq);
                        let edge = C64::from_polar(1.0, qq * cutoff as f64) * c[cutoff]
                            + C64::from_polar(1.0, qq * (cutoff as f64 - 1.0)) * c[cutoff - 1];
                        s += edge * z / (ONE - z) * 2.0;
                    }
                    s.re
                })
                .collect()
        }
    };
    Ok(StructureFactor { q: q.to_vec(), values, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistics {
    Boson,
    Fermion,
}

impl Statistics {
    pub fn eta(self) -> f64 {
        match self {
            Statistics::Boson => 1.0,
            Statistics::Fermion => -1.0,
        }
    }
}

/// Lattice and expansion parameters for time-of-flight imaging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementGeometry {
    /// λ/2 in nm.
    pub lattice_constant_nm: f64,
    pub sites: usize,
    pub expansion_time_s: f64,
    pub mass_amu: f64,
    pub statistics: Statistics,
    /// Wannier rms width in nm.
    pub z0_nm: f64,
}

impl MeasurementGeometry {
    /// L = √(h t / M) in nm.
    pub fn expansion_length_nm(&self) -> Result<f64> {
        const AMU: f64 = 1.660_539_066_60e-27;
        let l2 = crate::pairpot::PLANCK * self.expansion_time_s / (self.mass_amu * AMU);
        if !(l2 > 0.0) || self.sites == 0 {
            return Err(Error::Domain("geometry needs positive time, mass and at least one site".into()));
        }
        Ok(l2.sqrt() * 1e9)
    }

    /// V = (L²/4πz₀)³.
    pub fn prefactor(&self) -> Result<f64> {
        let l = self.expansion_length_nm()?;
        Ok((l * l / (4.0 * std::f64::consts::PI * self.z0_nm)).powi(3))
    }
}

/// Spin-traced noise correlation, split into the geometric prefactor and
/// the dimensionless bracket so that G² = prefactor × bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2 {
    pub prefactor: f64,
    pub bracket: f64,
}

/// Two-site spin correlator ⟨S_j·S_ℓ + (S_j·S_ℓ)²⟩, which equals 1 + ⟨swap⟩.
fn exchange_correlator(state: &ChainState, j: usize, l: usize) -> Result<f64> {
    let mut e = [[Matrix3::<C64>::zeros(); 3]; 3];
    for (a, row) in e.iter_mut().enumerate() {
        for (b, m) in row.iter_mut().enumerate() {
            m[(a, b)] = ONE;
        }
    }
    let mut swap = ZERO;
    match state {
        ChainState::Finite(f) => {
            for a in 0..3 {
                for b in 0..3 {
                    swap += f.two_point(&e[a][b], j, &e[b][a], l);
                }
            }
        }
        ChainState::Infinite(m) => {
            let r = j.abs_diff(l);
            for a in 0..3 {
                for b in 0..3 {
                    swap += m.two_point(&e[a][b], &e[b][a], r)[r];
                }
            }
        }
    }
    Ok(1.0 + swap.re)
}

/// G²(x₁, x₂) for a unit-filled chain after free expansion. Positions are
/// in nm in the image plane; the chain sits at X_j = j·λ/2.
pub fn tof_g2(state: &ChainState, geom: &MeasurementGeometry, x1_nm: f64, x2_nm: f64) -> Result<G2> {
    let n = geom.sites;
    if let ChainState::Finite(f) = state {
        if f.n != n {
            return Err(Error::Precondition(format!("geometry has {n} sites but the state has {}", f.n)));
        }
    }
    let l = geom.expansion_length_nm()?;
    let q = 2.0 * std::f64::consts::PI * (x1_nm - x2_nm) / (l * l);
    let x = |j: usize| j as f64 * geom.lattice_constant_nm;
    let amp: C64 = (0..n).map(|j| C64::from_polar(1.0, q * x(j))).sum();
    let k = amp.norm_sqr();
    let eta = geom.statistics.eta();
    let mut spin = ZERO;
    // correlators depend only on |j − ℓ| for the infinite chain
    let mut cache: Vec<Option<f64>> = vec![None; n];
    for j in 0..n {
        for ll in 0..n {
            if j == ll {
                continue;
            }
            let c = match state {
                ChainState::Infinite(_) => {
                    let r = j.abs_diff(ll);
                    match cache[r] {
                        Some(v) => v,
                        None => {
                            let v = exchange_correlator(state, 0, r)?;
                            cache[r] = Some(v);
                            v
                        }
                    }
                }
                ChainState::Finite(_) => exchange_correlator(state, j, ll)?,
            };
            spin += C64::from_polar(c, q * (x(j) - x(ll)));
        }
    }
    let nf = n as f64;
    let bracket = (nf * (nf - 1.0) + eta * nf - eta * k + eta * spin.re) / (nf * nf);
    Ok(G2 { prefactor: geom.prefactor()?, bracket })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aklt() -> PairOperator {
        bbq_unchecked((1.0f64 / 3.0).atan(), 1.0)
    }

    #[test]
    fn bbq_spectra() {
        let ev = crate::effective::eigenvalues(&bilinear_biquadratic(0.0, 1.5).unwrap());
        assert_relative_eq!(ev[0], -3.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], -1.5, epsilon = 1e-12);
        assert_relative_eq!(ev[8], 1.5, epsilon = 1e-12);
        // AKLT point: −(2/√10)·1 + (6/√10)·P₂
        let ev = crate::effective::eigenvalues(&aklt());
        let s10 = 10f64.sqrt();
        assert_relative_eq!(ev[0], -2.0 / s10, epsilon = 1e-12);
        assert_relative_eq!(ev[3], -2.0 / s10, epsilon = 1e-12);
        assert_relative_eq!(ev[4], 4.0 / s10, epsilon = 1e-12);
        assert!(bilinear_biquadratic(0.0, 0.0).is_err());
    }

    #[test]
    fn swap_identity() {
        let ss = heisenberg();
        let d = ss + ss * ss - PairOperator::identity() - swap_operator();
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn two_sites_singlet() {
        let (e, st) = exact_ground_state(&bbq_unchecked(0.0, 1.0), 2, Boundary::Open).unwrap();
        assert_relative_eq!(e, -2.0, epsilon = 1e-12);
        assert_eq!(st.degeneracy(), 1);
    }

    #[test]
    fn three_site_ising() {
        let z = sz();
        let (e, st) = exact_ground_state(&PairOperator::kron(&z, &z), 3, Boundary::Open).unwrap();
        assert_relative_eq!(e, -2.0, epsilon = 1e-12);
        // |+−+⟩ and |−+−⟩
        assert_eq!(st.degeneracy(), 2);
    }

    #[test]
    fn aklt_open_chain_quadruplet() {
        let (e, st) = exact_ground_state(&aklt(), 8, Boundary::Open).unwrap();
        assert_relative_eq!(e, -7.0 * 2.0 / 10f64.sqrt(), epsilon = 1e-9);
        assert_eq!(st.degeneracy(), 4);
        assert!(st.next_energy.unwrap() > e + 0.1);
    }

    #[test]
    fn aklt_itebd_exact() {
        let opts = ItebdOptions::default();
        let mps = itebd_ground_state(&aklt(), 2, &opts).unwrap();
        assert_relative_eq!(mps.energy, -2.0 / 10f64.sqrt(), epsilon = 1e-8);
        let st = ChainState::Infinite(mps);
        let z = sz();
        assert_relative_eq!(correlator(&st, &z, 0).unwrap().re, 2.0 / 3.0, epsilon = 1e-8);
        for r in 1..=10 {
            let want = 4.0 / 3.0 * (-1.0f64 / 3.0).powi(r as i32);
            assert_relative_eq!(correlator(&st, &z, r).unwrap().re, want, epsilon = 1e-8);
        }
        assert_relative_eq!(correlator(&st, &Matrix3::identity(), 3).unwrap().re, 1.0, epsilon = 1e-10);
        let sf = structure_factor(&st, &z, &[std::f64::consts::PI], 200).unwrap();
        assert_relative_eq!(sf.values[0], 2.0, epsilon = 1e-8);
        if let ChainState::Infinite(m) = &st {
            assert_relative_eq!(m.subleading_transfer_eigenvalue(), 1.0 / 9.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn product_state_has_flat_structure_factor() {
        let mut e0 = Matrix3::<C64>::zeros();
        e0[(1, 1)] = ONE;
        let mut site = vec![DMatrix::zeros(1, 1); 3];
        site[1] = DMatrix::from_element(1, 1, ONE);
        let mps = InfiniteMps {
            tensors: [site.clone(), site],
            lambdas: [DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)],
            chi: 1,
            energy: 0.0,
            sweeps: 0,
            last_change: 0.0,
        };
        let st = ChainState::Infinite(mps);
        let sf = structure_factor(&st, &sz(), &q_grid(16), 20).unwrap();
        assert!(sf.values.iter().all(|v| v.abs() < 1e-14));
        let _ = e0;
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(itebd_ground_state(&aklt(), 0, &ItebdOptions::default()), Err(Error::Precondition(_))));
        assert!(matches!(exact_ground_state(&aklt(), 15, Boundary::Open), Err(Error::Resource(_))));
    }
}
