#![allow(dead_code)]

pub mod catalogue;
pub mod props;

use nalgebra::{Complex, Matrix3};
use spin1_forge::designer::traceless_operator_norm;
use spin1_forge::effective::{
    asymptotic_effective_hamiltonian, spin1_matrices, CouplingCatalogue, FieldWeight, PairOperator, Polarization,
};
use spin1_forge::molecule::{Branch, Manifold};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pol {
    X,
    Y,
    Z,
}

impl Pol {
    pub fn vector(self) -> Polarization {
        match self {
            Pol::X => Polarization::x(),
            Pol::Y => Polarization::y(),
            Pol::Z => Polarization::z(),
        }
    }
}

/// One field of a spin-pattern recipe: manifold k ∈ {0, 1, 2}, branch j and
/// saturation weight s_j / s.
pub type Ingredient = (usize, usize, f64, Pol);

pub struct Recipe {
    pub name: &'static str,
    pub fields: Vec<Ingredient>,
    pub pattern: PairOperator,
}

pub fn manifold(k: usize) -> Manifold {
    match k {
        0 => Manifold::excited(0, Branch::Single),
        k => Manifold::excited(k as i32, Branch::Minus),
    }
}

fn kron(a: &Matrix3<C64>, b: &Matrix3<C64>) -> PairOperator {
    PairOperator::kron(a, b)
}

/// The spin-pattern table, weights as printed (s_j/s solved from each row).
pub fn table1() -> Vec<Recipe> {
    let [sx, sy, sz] = spin1_matrices();
    let one = Matrix3::<C64>::identity();
    let sz2 = sz * sz;
    let ss = kron(&sx, &sx) + kron(&sy, &sy) + kron(&sz, &sz);
    let r3 = 3f64.sqrt();
    let w14 = 12.0 * (5.0 * r3 - 9.0) / (4.0 * r3 - 7.0);
    let w5 = 12.0 * (5.0 * r3 + 9.0) / (4.0 * r3 + 7.0);
    use Pol::*;
    vec![
        Recipe {
            name: "SzSz (three z fields)",
            fields: vec![(1, 3, -0.5, Z), (2, 7, -6.0, Z), (2, 14, w14, Z)],
            pattern: kron(&sz, &sz),
        },
        Recipe {
            name: "SzSz (x and z fields)",
            fields: vec![(0, 3, -9.0, X), (1, 3, -0.5, Z), (2, 5, w5, Z)],
            pattern: kron(&sz, &sz),
        },
        Recipe {
            name: "Sz2Sz2 (two z fields)",
            fields: vec![(1, 3, 0.5, Z), (1, 7, 1.0 / 6.0, Z)],
            pattern: kron(&sz2, &sz2),
        },
        Recipe {
            name: "Sz2Sz2 (x and z fields)",
            fields: vec![(0, 3, 9.0, X), (1, 3, 0.5, Z)],
            pattern: kron(&sz2, &sz2),
        },
        Recipe {
            name: "(1-Sz2)(1-Sz2)",
            fields: vec![(0, 1, 4.5, Z), (0, 4, -4.5, Y), (1, 6, 0.5, X)],
            pattern: kron(&(one - sz2), &(one - sz2)),
        },
        Recipe {
            name: "SxSx+SySy",
            fields: vec![(0, 1, 6.0, Z), (0, 3, -9.0, Z), (0, 4, 9.0, Z), (2, 1, -10.93725, Z), (2, 11, 4.93725, Z)],
            pattern: kron(&sx, &sx) + kron(&sy, &sy),
        },
        Recipe {
            name: "(S.S)^2",
            fields: vec![(0, 1, -1.5, Z), (1, 3, 1.0, Z), (2, 1, 10.93725, Z), (2, 11, -4.93725, Z), (2, 14, -w14, Z)],
            pattern: ss * ss,
        },
        Recipe {
            name: "SxSx-3SzSz",
            fields: example2_fields(),
            pattern: kron(&sx, &sx) - kron(&sz, &sz).scale(3.0),
        },
    ]
}

/// Thirteen x̂-polarized fields of the anisotropic in-plane pattern.
pub fn example2_fields() -> Vec<Ingredient> {
    use Pol::X;
    vec![
        (0, 3, 36.0, X),
        (0, 4, 13.5, X),
        (1, 1, -35.32, X),
        (1, 2, 1.0 / 1.183, X),
        (1, 6, 1.5, X),
        (2, 4, -4.604, X),
        (2, 5, 900.67, X),
        (2, 6, 21.56, X),
        (2, 8, -27.0, X),
        (2, 9, -29.54, X),
        (2, 11, -16.34, X),
        (2, 13, -42.59, X),
        (2, 16, 7.15, X),
    ]
}

pub fn assemble(fields: &[Ingredient], cat: &CouplingCatalogue, pol: impl Fn(Pol) -> Polarization) -> PairOperator {
    let weights: Vec<FieldWeight> = fields
        .iter()
        .map(|&(k, j, w, p)| FieldWeight { manifold: manifold(k), branch: j, saturation: w, polarization: pol(p) })
        .collect();
    asymptotic_effective_hamiltonian(&weights, cat).unwrap()
}

/// ‖H − P‖ / ‖P‖ in the traceless spectral norm.
pub fn pattern_residual(h: &PairOperator, p: &PairOperator) -> f64 {
    traceless_operator_norm(&(*h - *p)) / traceless_operator_norm(p)
}

/// Least-squares scale λ minimizing the Frobenius distance of the traceless parts.
pub fn best_scale(h: &PairOperator, p: &PairOperator) -> f64 {
    let (h, p) = (h.traceless(), p.traceless());
    (p.adjoint() * h).trace().re / (p.adjoint() * p).trace().re
}

/// Acceptance bound for the spin-pattern residuals.
pub const PATTERN_TOL: f64 = 1e-6;

pub fn catalogue() -> CouplingCatalogue {
    let model = spin1_forge::molecule::MoleculeModel::new(&spin1_forge::molecule::MoleculeSpec::cacl()).unwrap();
    CouplingCatalogue::new(&model).unwrap()
}
