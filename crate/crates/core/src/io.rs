//! File formats: molecule constants, field sets, and CSV exports.
//!
//! Every number written by this module carries 15 significant digits.

use std::io::Write;
use std::str::FromStr;

use crate::angular::HalfInt;
use crate::chain::StructureFactor;
use crate::effective::{AnchoredField, PairOperator, Polarization, C64};
use crate::error::{Error, Result};
use crate::molecule::{closed_form_levels, HyperfineLevel, Manifold, MoleculeSpec};
use crate::pairpot::CurveSet;

/// 15 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.14e}")
}

const MOLECULE_KEYS: [&str; 8] = ["B_MHz", "gamma_MHz", "b_MHz", "c_MHz", "eQq_MHz", "d_debye", "I_twice", "mass_amu"];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a TOML molecule description. Keys are case-sensitive and all
/// eight are required.
pub fn parse_molecule(text: &str) -> Result<MoleculeSpec> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })?;
    for key in table.keys() {
        if !MOLECULE_KEYS.contains(&key.as_str()) {
            let line = text.find(key.as_str()).map_or(1, |o| line_of(text, o));
            return Err(Error::Parse { line, msg: format!("unknown key '{key}'") });
        }
    }
    let get = |key: &str| -> Result<f64> {
        let v = table.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}' in molecule file")))?;
        v.as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| Error::Parse {
                line: text.find(key).map_or(1, |o| line_of(text, o)),
                msg: format!("key '{key}' must be a number"),
            })
    };
    let i_twice = get("I_twice")?;
    if i_twice.fract() != 0.0 || i_twice < 0.0 {
        return Err(Error::Config(format!("I_twice must be a non-negative integer, got {i_twice}")));
    }
    let spec = MoleculeSpec {
        b_rot: get("B_MHz")?,
        gamma: get("gamma_MHz")?,
        b_fermi: get("b_MHz")?,
        c_dip: get("c_MHz")?,
        eqq: get("eQq_MHz")?,
        dipole_debye: get("d_debye")?,
        nuclear_spin: HalfInt::from_twice(i_twice as i32),
        mass_amu: get("mass_amu")?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_molecule(path: &std::path::Path) -> Result<MoleculeSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_molecule(&text)
}

pub fn molecule_to_toml(spec: &MoleculeSpec) -> String {
    format!(
        "B_MHz = {}\ngamma_MHz = {}\nb_MHz = {}\nc_MHz = {}\neQq_MHz = {}\nd_debye = {}\nI_twice = {}\nmass_amu = {}\n",
        spec.b_rot,
        spec.gamma,
        spec.b_fermi,
        spec.c_dip,
        spec.eqq,
        spec.dipole_debye,
        spec.nuclear_spin.twice_value,
        spec.mass_amu
    )
}

fn parse_complex(s: &str, line: usize) -> Result<C64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    C64::from_str(&t).map_err(|_| Error::Parse { line, msg: format!("bad complex number '{s}'") })
}

fn fmt_complex(z: C64) -> String {
    if z.im == 0.0 {
        fmt_num(z.re)
    } else {
        let sign = if z.im.is_sign_negative() { '-' } else { '+' };
        format!("{}{sign}{}i", fmt_num(z.re), fmt_num(z.im.abs()))
    }
}

/// Parses rows `rabi_kHz, anchor, offset_kHz, alpha_minus, alpha_0, alpha_plus`.
/// Lines starting with `#` and a leading header row are skipped.
pub fn parse_fields(text: &str) -> Result<Vec<AnchoredField>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if out.is_empty() && rec.get(0).is_some_and(|f| f.starts_with("rabi")) {
            continue;
        }
        if rec.len() != 6 {
            return Err(Error::Parse { line, msg: format!("expected 6 columns, found {}", rec.len()) });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse { line, msg: format!("bad number '{}'", &rec[k]) })
        };
        let anchor = Manifold::parse(&rec[1]).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let pol = Polarization::new(parse_complex(&rec[3], line)?, parse_complex(&rec[4], line)?, parse_complex(&rec[5], line)?);
        let pol = pol.normalized().map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.push(AnchoredField::new(num(0)?, anchor, num(2)?, pol));
    }
    if out.is_empty() {
        return Err(Error::Config("field file contains no fields".into()));
    }
    Ok(out)
}

pub fn read_fields(path: &std::path::Path) -> Result<Vec<AnchoredField>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_fields(&text)
}

pub fn write_fields<W: Write>(fields: &[AnchoredField], mut w: W) -> Result<()> {
    writeln!(w, "rabi_kHz,anchor,offset_kHz,alpha_minus,alpha_0,alpha_plus")?;
    for f in fields {
        let p = f.polarization.0;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_num(f.rabi_khz),
            f.anchor,
            fmt_num(f.offset_khz),
            fmt_complex(p[0]),
            fmt_complex(p[1]),
            fmt_complex(p[2])
        )?;
    }
    Ok(())
}

/// Nine rows of nine `re,im` pairs.
pub fn write_operator<W: Write>(op: &PairOperator, mut w: W) -> Result<()> {
    for r in 0..9 {
        let row: Vec<String> =
            (0..9).map(|c| format!("{},{}", fmt_num(op.matrix[(r, c)].re), fmt_num(op.matrix[(r, c)].im))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn parse_operator(text: &str) -> Result<PairOperator> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).collect();
    if rows.len() != 9 {
        return Err(Error::Parse { line: rows.len(), msg: "operator file needs 9 rows".into() });
    }
    let mut op = PairOperator::zero();
    for (r, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = row
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: r + 1, msg: e.to_string() })?;
        if vals.len() != 18 {
            return Err(Error::Parse { line: r + 1, msg: format!("expected 18 values, found {}", vals.len()) });
        }
        for c in 0..9 {
            op.matrix[(r, c)] = C64::new(vals[2 * c], vals[2 * c + 1]);
        }
    }
    Ok(op)
}

/// Level table with closed-form cross-check columns (empty where no closed
/// form exists).
pub fn write_levels<W: Write>(levels: &[HyperfineLevel], spec: &MoleculeSpec, mut w: W) -> Result<()> {
    let closed = closed_form_levels(spec).ok();
    writeln!(w, "N,F,M,manifold,E_MHz,E_closed_MHz,rel_diff,phi,phi_closed")?;
    for l in levels {
        let ec = closed.as_ref().and_then(|c| c.energy(l.manifold));
        let pc = closed.as_ref().and_then(|c| c.mixing_angle(l.manifold));
        let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            l.manifold.n,
            l.f,
            l.m,
            l.manifold,
            fmt_num(l.energy),
            opt(ec),
            opt(ec.map(|e| (l.energy - e).abs() / e.abs().max(f64::MIN_POSITIVE))),
            opt(l.mixing_angle),
            opt(l.mixing_angle.and(pc))
        )?;
    }
    Ok(())
}

/// One row per (curve, r) with the asymptotic manifold pair appended.
pub fn write_curves<W: Write>(set: &CurveSet, mut w: W) -> Result<()> {
    writeln!(w, "r_nm,block_mtot2,block_sigma,branch,E_MHz,degeneracy,asymptote")?;
    for c in &set.curves {
        for &(r, e) in &c.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{}+{}",
                fmt_num(r),
                c.m_tot2,
                c.sigma,
                c.index,
                fmt_num(e),
                c.degeneracy,
                c.asymptote.ground,
                c.asymptote.excited
            )?;
        }
    }
    Ok(())
}

pub fn write_structure_factor<W: Write>(sf: &StructureFactor, mut w: W) -> Result<()> {
    writeln!(w, "q,S_value")?;
    for (q, s) in sf.q.iter().zip(&sf.values) {
        writeln!(w, "{},{}", fmt_num(*q), fmt_num(*s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CACL: &str = "B_MHz = 4563.746\ngamma_MHz = 42.208\nb_MHz = 19.30134\nc_MHz = 12.4554\neQq_MHz = 1.00284\nd_debye = 4.265\nI_twice = 3\nmass_amu = 74.9\n";

    #[test]
    fn molecule_round_trip() {
        let spec = parse_molecule(CACL).unwrap();
        assert_eq!(spec, MoleculeSpec::cacl());
        assert_eq!(parse_molecule(&molecule_to_toml(&spec)).unwrap(), spec);
    }

    #[test]
    fn molecule_errors_name_key_and_line() {
        let missing = CACL.replace("c_MHz = 12.4554\n", "");
        match parse_molecule(&missing) {
            Err(Error::Config(m)) => assert!(m.contains("c_MHz")),
            other => panic!("{other:?}"),
        }
        let bad = CACL.replace("b_MHz = 19.30134", "b_MHz = = 1");
        assert!(matches!(parse_molecule(&bad), Err(Error::Parse { line: 3, .. })));
        let lower = CACL.replace("B_MHz", "b_mhz");
        assert!(matches!(parse_molecule(&lower), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn fields_round_trip() {
        let text = "rabi_kHz,anchor,offset_kHz,alpha_minus,alpha_0,alpha_plus\n# comment\n18.607, 2-, -120.619, 0, 1, 0\n5, 1+, 3.5, 0.6+0.1i, 0, -0.2-0.3i\n";
        let f = parse_fields(text).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].anchor, Manifold::parse("2-").unwrap());
        assert!(f[0].polarization.is_z());
        assert!((f[1].polarization.norm_sqr() - 1.0).abs() < 1e-15);
        let mut buf = Vec::new();
        write_fields(&f, &mut buf).unwrap();
        let g = parse_fields(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert_eq!(a.anchor, b.anchor);
            assert!((a.rabi_khz - b.rabi_khz).abs() < 1e-12);
            for k in 0..3 {
                assert!((a.polarization.0[k] - b.polarization.0[k]).norm() < 1e-13);
            }
        }
        assert!(matches!(parse_fields("1, 0, 2, 0, 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_fields("1, 9x, 2, 0, 1, 0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn operator_round_trip() {
        let op = crate::effective::heisenberg().scale(0.3) + PairOperator::identity();
        let mut buf = Vec::new();
        write_operator(&op, &mut buf).unwrap();
        let back = parse_operator(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert!((back - op).max_abs() < 1e-14);
    }

    #[test]
    fn fifteen_digits() {
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333333333e-1");
        assert_eq!(fmt_num(0.0), "0");
    }
}
