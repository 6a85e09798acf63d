//! The printed coupling-matrix catalogue (`fixtures/coupling_catalogue.txt`)
//! stored as polynomial coefficients: entry(row, col) = Σ coef·α_x·α_y*.

use std::collections::BTreeMap;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spin1_forge::effective::{CouplingCatalogue, Polarization};

use super::manifold;

type C64 = Complex<f64>;

/// (k, j, row, col)
pub type Key = (usize, usize, usize, usize);

#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub x: usize,
    pub y: usize,
    pub coef: C64,
    pub tol: f64,
}

/// Rounding each printed coefficient costs at most its quoted half-unit, and
/// Σ|α_x||α_y| ≤ 3 for a unit polarization.
pub const ROUNDING_SLACK: f64 = 3.0;
/// Entries absent from the listing are zero.
pub const ZERO_TOL: f64 = 1e-12;
pub const POLARIZATIONS: usize = 50;

pub fn printed() -> BTreeMap<Key, Vec<Term>> {
    let mut out: BTreeMap<Key, Vec<Term>> = BTreeMap::new();
    for line in include_str!("../fixtures/coupling_catalogue.txt").lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let u = |i: usize| f[i].parse::<usize>().unwrap();
        let g = |i: usize| f[i].parse::<f64>().unwrap();
        out.entry((u(0), u(1), u(2), u(3))).or_default().push(Term {
            x: u(4),
            y: u(5),
            coef: C64::new(g(6), g(7)),
            tol: g(8),
        });
    }
    out
}

/// Computed coefficient of α_x·α_y* in entry (row, col).
pub fn computed(cat: &CouplingCatalogue, key: Key, x: usize, y: usize) -> f64 {
    let (k, j, r, c) = key;
    let mc = cat.manifold(manifold(k)).unwrap();
    let b = mc.branch(j).unwrap();
    b.amplitudes.iter().map(|a| a[y][r] * a[x][c]).sum::<f64>() / mc.norm
}

/// Images of a printed term under Hermitian conjugation, molecule exchange
/// and M → −M reflection (magnitudes only; the phases differ by convention).
fn orbit(key: Key, x: usize, y: usize) -> Vec<(Key, usize, usize)> {
    let (k, j, r, c) = key;
    let ex = |i: usize| (i % 3) * 3 + i / 3;
    let mut seeds = vec![(r, c, x, y), (c, r, y, x)];
    for s in seeds.clone() {
        seeds.push((ex(s.0), ex(s.1), s.2, s.3));
    }
    for s in seeds.clone() {
        seeds.push((8 - s.0, 8 - s.1, 2 - s.2, 2 - s.3));
    }
    seeds.sort();
    seeds.dedup();
    seeds.into_iter().map(|(r, c, x, y)| ((k, j, r, c), x, y)).collect()
}

#[derive(Debug, Default)]
pub struct Report {
    pub matrices: usize,
    pub evaluations: usize,
    /// Entries missing the random-polarization comparison, with the worst error.
    pub misses: BTreeMap<Key, f64>,
    /// Mismatched printed terms with no printed symmetry copy backing the computed value.
    pub unexplained: Vec<(Key, usize, usize)>,
}

pub fn compare(cat: &CouplingCatalogue, seed: u64) -> Report {
    let table = printed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let pols: Vec<Polarization> =
        (0..POLARIZATIONS).map(|_| Polarization::new(c(), c(), c()).normalized().unwrap()).collect();
    let mut rep = Report::default();
    for k in 0..3 {
        let mc = cat.manifold(manifold(k)).unwrap();
        for b in &mc.branches {
            rep.matrices += 1;
            for pol in &pols {
                let a = mc.matrix(b.j, pol).unwrap();
                for r in 0..9 {
                    for col in 0..9 {
                        let (want, tol) = match table.get(&(k, b.j, r, col)) {
                            Some(ts) => (
                                ts.iter().map(|t| t.coef * pol.0[t.x] * pol.0[t.y].conj()).sum::<C64>(),
                                ts.iter().map(|t| t.tol).fold(0.0, f64::max),
                            ),
                            None => (C64::new(0.0, 0.0), ZERO_TOL),
                        };
                        rep.evaluations += 1;
                        let err = (a.matrix[(r, col)] - want).norm();
                        if err > ROUNDING_SLACK * tol + 1e-13 {
                            let m = rep.misses.entry((k, b.j, r, col)).or_default();
                            *m = m.max(err);
                        }
                    }
                }
            }
        }
    }
    for key in rep.misses.keys() {
        for t in table.get(key).into_iter().flatten() {
            let ours = computed(cat, *key, t.x, t.y);
            if (t.coef.re - ours).abs() <= t.tol && t.coef.im.abs() <= t.tol {
                continue;
            }
            let backed = orbit(*key, t.x, t.y).into_iter().any(|(k2, x2, y2)| {
                table.get(&k2).into_iter().flatten().any(|u| {
                    u.x == x2
                        && u.y == y2
                        && (u.coef.norm() - ours.abs()).abs() <= u.tol
                        && (u.coef.norm() - t.coef.norm()).abs() > u.tol + t.tol
                })
            });
            if !backed {
                rep.unexplained.push((*key, t.x, t.y));
            }
        }
    }
    rep
}
