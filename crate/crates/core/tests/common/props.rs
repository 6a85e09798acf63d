//! Invariant checks shared by the property tests and the acceptance run.

use std::sync::OnceLock;

use nalgebra::{Complex, Matrix3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use spin1_forge::angular::{clebsch_gordan, wigner_6j, EulerAngles, HalfInt};
use spin1_forge::chain::{
    bilinear_biquadratic, clock_operator, exact_ground_state, q_grid, structure_factor, swap_operator, sz, Boundary,
    ChainState,
};
use spin1_forge::designer::{design_error, optimize_fields, DesignContext, OptimizerConfig};
use spin1_forge::effective::{
    asymptotic_effective_hamiltonian, heisenberg, rotate_operator, CouplingCatalogue, FieldWeight, PairOperator,
    Polarization,
};
use spin1_forge::molecule::{Branch, Manifold, MoleculeModel, MoleculeSpec};
use spin1_forge::pairpot::{build_pair_hamiltonian, PairSystem};

type C64 = Complex<f64>;

pub type Outcome = Result<(), String>;

pub const ORTHO_TOL: f64 = 1e-12;

/// (name, check, cases for the property tests)
pub fn suite() -> Vec<(&'static str, fn(u32) -> Outcome, u32)> {
    vec![
        ("CG rows orthonormal", cg_rows_are_orthonormal, 64),
        ("CG columns orthonormal", cg_columns_are_orthonormal, 64),
        ("6j orthogonality", sixj_orthogonality, 64),
        ("H_eff Hermitian and exchange symmetric", effective_hamiltonian_is_hermitian_and_exchange_symmetric, 64),
        ("z fields conserve M_tot", z_polarized_fields_conserve_total_projection, 64),
        ("pair Hamiltonian blocks symmetric", pair_blocks_are_symmetric, 8),
        ("swap identity", swap_identity_is_rotation_invariant, 64),
        ("design_error shift and scale invariance", design_error_ignores_shift_and_scale, 64),
        ("exact targets have zero error", exact_targets_have_zero_error, 64),
        ("structure factor non-negative", structure_factor_is_non_negative, 12),
        ("optimizer determinism", optimizer_is_deterministic_for_a_seed, 2),
    ]
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn finish<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Outcome {
    r.map_err(|e| e.to_string())
}

fn catalogue() -> &'static CouplingCatalogue {
    static CAT: OnceLock<CouplingCatalogue> = OnceLock::new();
    CAT.get_or_init(|| CouplingCatalogue::new(&MoleculeModel::new(&MoleculeSpec::cacl()).unwrap()).unwrap())
}

fn tri(x: HalfInt, y: HalfInt, z: HalfInt) -> bool {
    let (x, y, z) = (x.twice_value, y.twice_value, z.twice_value);
    z >= (x - y).abs() && z <= x + y && (x + y + z) % 2 == 0
}

fn half(max_twice: i32) -> impl Strategy<Value = HalfInt> {
    (0..=max_twice).prop_map(HalfInt::from_twice)
}

fn c64() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C64::new(a, b))
}

fn polarization() -> impl Strategy<Value = Polarization> {
    (c64(), c64(), c64())
        .prop_filter("nonzero", |(a, b, c)| a.norm() + b.norm() + c.norm() > 0.1)
        .prop_map(|(a, b, c)| Polarization::new(a, b, c).normalized().unwrap())
}

fn field_term(z_only: bool) -> impl Strategy<Value = FieldWeight> {
    let manifolds = [
        (Manifold::excited(0, Branch::Single), 4usize),
        (Manifold::excited(1, Branch::Minus), 8),
        (Manifold::excited(1, Branch::Plus), 8),
        (Manifold::excited(2, Branch::Minus), 16),
        (Manifold::excited(2, Branch::Plus), 16),
    ];
    (0..manifolds.len(), 0..16usize, -3.0..3.0f64, polarization()).prop_map(move |(m, j, s, pol)| {
        let (manifold, nb) = manifolds[m];
        FieldWeight {
            manifold,
            branch: 1 + j % nb,
            saturation: s,
            polarization: if z_only { Polarization::z() } else { pol },
        }
    })
}

fn angles() -> impl Strategy<Value = EulerAngles> {
    (-3.2..3.2f64, 0.0..3.2f64, -3.2..3.2f64).prop_map(|(a, b, c)| EulerAngles::new(a, b, c))
}

fn random_operator() -> impl Strategy<Value = PairOperator> {
    proptest::collection::vec(c64(), 81).prop_map(|v| {
        let m = nalgebra::SMatrix::<C64, 9, 9>::from_iterator(v);
        PairOperator::new((m + m.adjoint()) * C64::new(0.5, 0.0))
    })
}

fn commutator_norm(a: &PairOperator, b: &PairOperator) -> f64 {
    (*a * *b - *b * *a).max_abs()
}

pub fn cg_rows_are_orthonormal(cases: u32) -> Outcome {
    finish(runner(cases).run(&(half(6), half(6), 0..7i32, 0..7i32), |(j1, j2, k1, k2)| {
        let lo = (j1.twice_value - j2.twice_value).abs();
        let count = (j1.twice_value + j2.twice_value - lo) / 2 + 1;
        let jt = HalfInt::from_twice(lo + 2 * (k1 % count));
        let jt2 = HalfInt::from_twice(lo + 2 * (k2 % count));
        for m in jt.projections().filter(|m| jt2.admits(*m)) {
            let mut s = 0.0;
            for m1 in j1.projections() {
                let m2 = m - m1;
                if j2.admits(m2) {
                    s += clebsch_gordan(j1, m1, j2, m2, jt, m).unwrap() * clebsch_gordan(j1, m1, j2, m2, jt2, m).unwrap();
                }
            }
            let want = if jt == jt2 { 1.0 } else { 0.0 };
            prop_assert!((s - want).abs() < ORTHO_TOL, "{}", s);
        }
        Ok(())
    }))
}

pub fn cg_columns_are_orthonormal(cases: u32) -> Outcome {
    finish(runner(cases).run(&(half(5), half(5), 0..12usize, 0..12usize), |(j1, j2, t1, t2)| {
        let m1 = j1.projections().nth(t1 % j1.dim() as usize).unwrap();
        let m2 = j2.projections().nth(t2 % j2.dim() as usize).unwrap();
        let mut s = 0.0;
        let mut jt = HalfInt::from_twice((j1.twice_value - j2.twice_value).abs());
        while jt.twice_value <= j1.twice_value + j2.twice_value {
            if jt.admits(m1 + m2) {
                s += clebsch_gordan(j1, m1, j2, m2, jt, m1 + m2).unwrap().powi(2);
            }
            jt = jt + HalfInt::ONE;
        }
        prop_assert!((s - 1.0).abs() < ORTHO_TOL);
        Ok(())
    }))
}

pub fn sixj_orthogonality(cases: u32) -> Outcome {
    finish(runner(cases).run(&(half(6), half(6), half(6), 0..4i32, 0..8i32, 0..8i32), |(a, b, c, k, p, q)| {
        // {a b x; c d j}: x couples (a, b) and (c, d); j couples (a, d) and (c, b)
        let d = HalfInt::from_twice(2 * k + (c.twice_value + b.twice_value - a.twice_value).rem_euclid(2));
        let lo = (a.twice_value - d.twice_value).abs().max((c.twice_value - b.twice_value).abs());
        let hi = (a.twice_value + d.twice_value).min(c.twice_value + b.twice_value);
        prop_assume!(hi >= lo);
        let count = (hi - lo) / 2 + 1;
        let (j, jp) = (HalfInt::from_twice(lo + 2 * (p % count)), HalfInt::from_twice(lo + 2 * (q % count)));
        let mut s = 0.0;
        for tx in 0..=24 {
            let x = HalfInt::from_twice(tx);
            if tri(a, b, x) && tri(c, d, x) {
                s += (tx + 1) as f64
                    * (j.twice_value + 1) as f64
                    * wigner_6j(a, b, x, c, d, j).unwrap()
                    * wigner_6j(a, b, x, c, d, jp).unwrap();
            }
        }
        let want = if j == jp { 1.0 } else { 0.0 };
        prop_assert!((s - want).abs() < ORTHO_TOL, "{}", s);
        Ok(())
    }))
}

pub fn effective_hamiltonian_is_hermitian_and_exchange_symmetric(cases: u32) -> Outcome {
    finish(runner(cases).run(&proptest::collection::vec(field_term(false), 1..6), |terms| {
        let h = asymptotic_effective_hamiltonian(&terms, catalogue()).unwrap();
        let scale = h.max_abs().max(1.0);
        prop_assert!(h.hermiticity_defect() < 1e-12 * scale);
        prop_assert!(commutator_norm(&h, &swap_operator()) < 1e-12 * scale);
        Ok(())
    }))
}

pub fn z_polarized_fields_conserve_total_projection(cases: u32) -> Outcome {
    finish(runner(cases).run(&proptest::collection::vec(field_term(true), 1..6), |terms| {
        let h = asymptotic_effective_hamiltonian(&terms, catalogue()).unwrap();
        prop_assert!(h.off_block_norm() < 1e-12 * h.max_abs().max(1.0));
        prop_assert!(h.max_imag() < 1e-12 * h.max_abs().max(1.0));
        Ok(())
    }))
}

pub fn pair_blocks_are_symmetric(cases: u32) -> Outcome {
    finish(runner(cases).run(&(150.0..600.0f64), |r| {
        for (block, h) in build_pair_hamiltonian(r, &MoleculeSpec::cacl()).unwrap() {
            prop_assert!((&h - h.transpose()).amax() < 1e-9, "block M={} σ={}", block.m_tot2, block.sigma);
        }
        Ok(())
    }))
}

pub fn swap_identity_is_rotation_invariant(cases: u32) -> Outcome {
    finish(runner(cases).run(&angles(), |a| {
        let ss = heisenberg();
        let lhs = ss + ss * ss - PairOperator::identity();
        prop_assert!((lhs - swap_operator()).max_abs() < 1e-13);
        prop_assert!((rotate_operator(&swap_operator(), a) - swap_operator()).max_abs() < 1e-13);
        prop_assert!((rotate_operator(&ss, a) - ss).max_abs() < 1e-13);
        Ok(())
    }))
}

pub fn design_error_ignores_shift_and_scale(cases: u32) -> Outcome {
    finish(runner(cases).run(&(random_operator(), -5.0..5.0f64, 0.01..100.0f64), |(h, shift, scale)| {
        let e0 = design_error(&h);
        let e1 = design_error(&(h.scale(scale) + PairOperator::identity().scale(shift)));
        prop_assert!((e0.error - e1.error).abs() < 1e-9, "{} vs {}", e0.error, e1.error);
        Ok(())
    }))
}

pub fn exact_targets_have_zero_error(cases: u32) -> Outcome {
    finish(runner(cases).run(&(-3.1..3.1f64, 0.1..10.0f64, -3.0..3.0f64), |(theta, u, shift)| {
        let h = bilinear_biquadratic(theta, u).unwrap() + PairOperator::identity().scale(shift);
        prop_assert!(design_error(&h).error < 1e-9);
        Ok(())
    }))
}

pub fn structure_factor_is_non_negative(cases: u32) -> Outcome {
    finish(runner(cases).run(&(-3.1..3.1f64, 3usize..7, any::<bool>(), any::<bool>()), |(theta, n, periodic, clock)| {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Open };
        let (_, st) = exact_ground_state(&bilinear_biquadratic(theta, 1.0).unwrap(), n, boundary).unwrap();
        let o: Matrix3<C64> = if clock { clock_operator() } else { sz() };
        let sf = structure_factor(&ChainState::Finite(st), &o, &q_grid(40), 200).unwrap();
        for v in &sf.values {
            prop_assert!(*v > -1e-10, "{}", v);
        }
        Ok(())
    }))
}

/// Runs the optimizer twice per seed and demands identical output.
pub fn optimizer_is_deterministic_for_a_seed(cases: u32) -> Outcome {
    let sys = PairSystem::from_spec(&MoleculeSpec::cacl()).map_err(|e| e.to_string())?;
    let ctx = DesignContext::new(&sys, 200.0, 2).map_err(|e| e.to_string())?;
    for seed in 0..cases as u64 {
        let cfg = OptimizerConfig { starts: 3, seed: 17 + seed, max_evals: 120, ..OptimizerConfig::default() };
        let a = optimize_fields(0.5, 3, &ctx, &cfg).map_err(|e| e.to_string())?;
        let b = optimize_fields(0.5, 3, &ctx, &cfg).map_err(|e| e.to_string())?;
        if a.fields != b.fields || a.nn_error.to_bits() != b.nn_error.to_bits() || a.interactions != b.interactions {
            return Err(format!("seed {} gave two different designs", cfg.seed));
        }
    }
    Ok(())
}
