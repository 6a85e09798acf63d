use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use itertools::Itertools;

use spin1_forge::chain::{
    bilinear_biquadratic, clock_operator, correlator, exact_ground_state, itebd_ground_state, q_grid,
    structure_factor, sz, Boundary, ChainState, ItebdOptions,
};
use spin1_forge::designer::{design_error, DesignContext, DesignResult, OptimizerConfig};
use spin1_forge::io::{self as sio, fmt_num};
use spin1_forge::molecule::{build_and_diagonalize, MoleculeSpec};
use spin1_forge::pairpot::{potential_curves_for, PairSystem};
use spin1_forge::{Error, Result};

#[derive(Parser)]
#[command(name = "spin1-forge", version, about = "Spin-1 chains from microwave-dressed polar molecules")]
struct Cli {
    /// Molecule constants (TOML); CaCl when omitted.
    #[arg(long, global = true)]
    molecule: Option<PathBuf>,
    /// Output directory; CSV goes to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file with default values for any long flag (flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Treat warnings as errors.
    #[arg(long, global = true)]
    deny_warnings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hyperfine levels of N = 0 and N = 1 with closed-form cross-checks.
    Spectrum,
    /// Dipole-dipole potential curves on an r grid.
    Curves(CurvesArgs),
    /// Evaluate or optimize a microwave field design.
    Design(DesignArgs),
    /// Ground state, correlators and structure factor of a spin-1 chain.
    Chain(ChainArgs),
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    r_steps: Option<usize>,
}

#[derive(Args)]
struct DesignArgs {
    /// Field set to evaluate.
    #[arg(long, conflicts_with = "optimize")]
    evaluate: Option<PathBuf>,
    /// Search for a field set near the target angle.
    #[arg(long)]
    optimize: bool,
    /// Alias of --evaluate for the field file.
    #[arg(long)]
    fields: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long)]
    n_fields: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    dz_nm: Option<f64>,
    #[arg(long)]
    ranges: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SfOperator {
    #[value(name = "Sz")]
    Sz,
    #[value(name = "Z3")]
    Z3,
}

#[derive(Args)]
struct ChainArgs {
    /// AKLT point tanθ = 1/3.
    #[arg(long)]
    aklt: bool,
    /// Bilinear-biquadratic angle.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Designed nearest-neighbour interaction from a field set.
    #[arg(long)]
    fields: Option<PathBuf>,
    /// Two-site interaction as a 9×9 CSV of re,im pairs.
    #[arg(long)]
    operator: Option<PathBuf>,
    #[arg(long)]
    dz_nm: Option<f64>,
    #[arg(long)]
    chi: Option<usize>,
    /// Exact diagonalization of an open chain of this length instead of iTEBD.
    #[arg(long)]
    ed: Option<usize>,
    #[arg(long, value_enum)]
    sf: Option<SfOperator>,
    #[arg(long)]
    q_points: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Largest separation in the correlator report.
    #[arg(long)]
    max_r: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Imaginary-time schedule as dt:steps pairs, e.g. 0.1:2000,0.01:40000.
    #[arg(long)]
    schedule: Option<String>,
    /// Stop once the bond spectra change by less than this per sweep.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the converged MPS as JSON into the output directory.
    #[arg(long)]
    mps_dump: bool,
}

/// Values from the optional config file.
struct Defaults(toml::Table);

impl Defaults {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(p) = path else {
            return Ok(Defaults(toml::Table::new()));
        };
        let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        let t: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", p.display())))?;
        Ok(Defaults(t))
    }

    fn f64(&self, key: &str, cli: Option<f64>, fallback: f64) -> Result<f64> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(fallback),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::Config(format!("config key '{key}' must be a number"))),
        }
    }

    fn opt_f64(&self, key: &str, cli: Option<f64>) -> Result<Option<f64>> {
        if cli.is_some() || self.0.contains_key(key) {
            self.f64(key, cli, 0.0).map(Some)
        } else {
            Ok(None)
        }
    }

    fn usize(&self, key: &str, cli: Option<usize>, fallback: usize) -> Result<usize> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(fallback),
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .ok_or_else(|| Error::Config(format!("config key '{key}' must be a non-negative integer"))),
        }
    }

    fn path(&self, key: &str, cli: Option<PathBuf>) -> Result<Option<PathBuf>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(PathBuf::from(s)))
                .ok_or_else(|| Error::Config(format!("config key '{key}' must be a string"))),
        }
    }

    fn flag(&self, key: &str, cli: bool) -> bool {
        cli || self.0.get(key).and_then(|v| v.as_bool()).unwrap_or(false)
    }
}

/// Destination for artifacts: files in the output directory or stdout.
struct Sink {
    dir: Option<PathBuf>,
    warnings: Vec<String>,
}

impl Sink {
    fn emit(&self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.dir {
            Some(d) => {
                let f = File::create(d.join(name)).map_err(|e| Error::Io(format!("{}: {e}", d.join(name).display())))?;
                let mut w = BufWriter::new(f);
                write(&mut w)?;
                w.flush()?;
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                write(&mut w)?;
            }
        }
        Ok(())
    }

    /// Key-value summary: a file when an output directory is set, stderr otherwise.
    fn report(&self, name: &str, rows: &[(String, String)]) -> Result<()> {
        let render = |w: &mut dyn Write| -> Result<()> {
            writeln!(w, "key,value")?;
            for (k, v) in rows {
                writeln!(w, "{k},{v}")?;
            }
            Ok(())
        };
        match &self.dir {
            Some(_) => self.emit(name, render),
            None => render(&mut io::stderr().lock()),
        }
    }

    fn warn(&mut self, msg: impl Into<String>) {
        let m = msg.into();
        eprintln!("warning: {m}");
        self.warnings.push(m);
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Singularity { .. } => 3,
        Error::NonConvergence { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    spin1_forge::configure_threads()?;
    let defaults = Defaults::load(cli.config.as_deref())?;
    let spec = match defaults.path("molecule", cli.molecule)? {
        Some(p) => sio::read_molecule(&p)?,
        None => MoleculeSpec::cacl(),
    };
    let dir = defaults.path("out", cli.out)?;
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::Config(format!("{}: {e}", d.display())))?;
    }
    let mut sink = Sink { dir, warnings: Vec::new() };
    match cli.command {
        Command::Spectrum => run_spectrum(&spec, &sink)?,
        Command::Curves(a) => run_curves(&spec, &a, &defaults, &mut sink)?,
        Command::Design(a) => run_design(&spec, a, &defaults, &mut sink)?,
        Command::Chain(a) => run_chain(&spec, a, &defaults, &mut sink)?,
    }
    if defaults.flag("deny_warnings", cli.deny_warnings) && !sink.warnings.is_empty() {
        return Err(Error::Config(format!("{} warning(s) treated as errors", sink.warnings.len())));
    }
    Ok(())
}

fn run_spectrum(spec: &MoleculeSpec, sink: &Sink) -> Result<()> {
    let mut levels = build_and_diagonalize(0, spec)?;
    levels.extend(build_and_diagonalize(1, spec)?);
    sink.emit("levels.csv", |w| sio::write_levels(&levels, spec, w))
}

fn run_curves(spec: &MoleculeSpec, a: &CurvesArgs, d: &Defaults, sink: &mut Sink) -> Result<()> {
    let r_min = d.f64("r_min", a.r_min, 100.0)?;
    let r_max = d.f64("r_max", a.r_max, 400.0)?;
    let steps = d.usize("r_steps", a.r_steps, 61)?;
    if steps == 0 || !(r_min > 0.0) || r_max < r_min {
        return Err(Error::Config("need r_min > 0, r_max ≥ r_min and at least one step".into()));
    }
    let grid: Vec<f64> = if steps == 1 {
        vec![r_min]
    } else {
        (0..steps).map(|k| r_min + (r_max - r_min) * k as f64 / (steps - 1) as f64).collect()
    };
    let sys = PairSystem::from_spec(spec)?;
    let set = potential_curves_for(&sys, &grid)?;
    for w in &set.warnings {
        sink.warn(w.clone());
    }
    sink.emit("curves.csv", |w| sio::write_curves(&set, w))
}

fn design_rows(r: &DesignResult) -> Vec<(String, String)> {
    let mut rows = vec![
        ("dz_nm".to_string(), fmt_num(r.dz_nm)),
        ("nn_error".into(), fmt_num(r.nn_error)),
        ("theta".into(), fmt_num(r.fitted.theta)),
        ("U_kHz".into(), fmt_num(r.fitted.u)),
        ("nnn_ratio".into(), fmt_num(r.nnn_ratio)),
        ("n3_ratio".into(), r.n3_ratio.map(fmt_num).unwrap_or_default()),
        ("max_saturation".into(), fmt_num(r.max_saturation)),
        ("zero_target".into(), r.zero_target.to_string()),
    ];
    for (k, w) in r.warnings.iter().enumerate() {
        rows.push((format!("warning_{k}"), format!("\"{}\"", w.replace('"', "'"))));
    }
    rows
}

fn run_design(spec: &MoleculeSpec, a: DesignArgs, d: &Defaults, sink: &mut Sink) -> Result<()> {
    let dz = d.f64("dz_nm", a.dz_nm, 200.0)?;
    let ranges = d.usize("ranges", a.ranges, 3)?;
    let sys = PairSystem::from_spec(spec)?;
    let ctx = DesignContext::new(&sys, dz, ranges)?;
    let file = match a.evaluate.or(a.fields) {
        Some(p) => Some(p),
        None => d.path("evaluate", None)?.or(d.path("fields", None)?),
    };
    let result = if d.flag("optimize", a.optimize) {
        let theta = d
            .opt_f64("theta", a.theta)?
            .ok_or_else(|| Error::Config("--optimize needs --theta".into()))?;
        let base = OptimizerConfig::default();
        let cfg = OptimizerConfig {
            seed: d.usize("seed", a.seed.map(|s| s as usize), base.seed as usize)? as u64,
            starts: d.usize("starts", a.starts, base.starts)?,
            ..base
        };
        let n = d.usize("n_fields", a.n_fields, 4)?;
        spin1_forge::designer::optimize_fields(theta, n, &ctx, &cfg)?
    } else {
        let path = file.ok_or_else(|| Error::Config("design needs --evaluate FILE or --optimize".into()))?;
        let fields = sio::read_fields(&path)?;
        ctx.evaluate(&fields)?
    };
    for w in &result.warnings {
        sink.warn(w.clone());
    }
    sink.report("report.csv", &design_rows(&result))?;
    if sink.dir.is_some() {
        sink.emit("h_nn.csv", |w| sio::write_operator(result.h_nn(), w))?;
        sink.emit("h_nnn.csv", |w| sio::write_operator(result.h_nnn(), w))?;
    }
    sink.emit("fields.csv", |w| sio::write_fields(&result.fields, w))
}

fn parse_schedule(s: &str) -> Result<Vec<(f64, usize)>> {
    s.split(',')
        .map(|item| {
            let (dt, n) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry '{item}' is not dt:steps")))?;
            let dt: f64 = dt.trim().parse().map_err(|_| Error::Config(format!("bad time step '{dt}'")))?;
            let n: usize = n.trim().parse().map_err(|_| Error::Config(format!("bad step count '{n}'")))?;
            Ok((dt, n))
        })
        .collect()
}

fn run_chain(spec: &MoleculeSpec, a: ChainArgs, d: &Defaults, sink: &mut Sink) -> Result<()> {
    let theta = d.opt_f64("theta", a.theta)?;
    let fields = match a.fields {
        Some(p) => Some(p),
        None => d.path("fields", None)?,
    };
    let operator = match a.operator {
        Some(p) => Some(p),
        None => d.path("operator", None)?,
    };
    let aklt = d.flag("aklt", a.aklt);
    let chosen = [aklt, theta.is_some(), fields.is_some(), operator.is_some()].iter().filter(|&&b| b).count();
    if chosen != 1 {
        return Err(Error::Config("chain needs exactly one of --aklt, --theta, --fields, --operator".into()));
    }
    let mut rows: Vec<(String, String)> = Vec::new();
    let h = if aklt {
        bilinear_biquadratic((1.0f64 / 3.0).atan(), 1.0)?
    } else if let Some(t) = theta {
        bilinear_biquadratic(t, 1.0)?
    } else if let Some(p) = operator {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        sio::parse_operator(&text)?
    } else {
        let dz = d.f64("dz_nm", a.dz_nm, 200.0)?;
        let sys = PairSystem::from_spec(spec)?;
        let ctx = DesignContext::new(&sys, dz, 2)?;
        let res = ctx.evaluate(&sio::read_fields(fields.as_deref().expect("checked above"))?)?;
        for w in &res.warnings {
            sink.warn(w.clone());
        }
        rows.push(("design_error".into(), fmt_num(res.nn_error)));
        rows.push(("design_theta".into(), fmt_num(res.fitted.theta)));
        rows.push(("design_U_kHz".into(), fmt_num(res.fitted.u)));
        *res.h_nn()
    };
    if h.hermiticity_defect() > 1e-9 * h.max_abs().max(1.0) {
        return Err(Error::Precondition("two-site interaction is not Hermitian".into()));
    }
    // ground states do not depend on the overall scale; evolve in units of U
    let fit = design_error(&h);
    let scale = if fit.closest.u > 0.0 { fit.closest.u } else { h.max_abs().max(1e-300) };
    let hs = h.scale(1.0 / scale);
    let max_r = d.usize("max_r", a.max_r, 10)?;
    let op = match a.sf {
        Some(SfOperator::Z3) => clock_operator(),
        Some(SfOperator::Sz) => sz(),
        None => match d.0.get("sf").and_then(|v| v.as_str()) {
            Some("Z3") => clock_operator(),
            Some("Sz") | None => sz(),
            Some(other) => return Err(Error::Config(format!("unknown structure-factor operator '{other}'"))),
        },
    };
    let ed = match a.ed {
        Some(n) => Some(n),
        None => d.0.get("ed").map(|_| d.usize("ed", None, 0)).transpose()?,
    };
    let state = if let Some(n) = ed {
        let (e, st) = exact_ground_state(&hs, n, Boundary::Open)?;
        rows.push(("sites".into(), n.to_string()));
        rows.push(("energy".into(), fmt_num(e * scale)));
        rows.push(("degeneracy".into(), st.degeneracy().to_string()));
        let mid = (n - 1) / 2;
        rows.push(("centre_bond_energy".into(), fmt_num(st.bond_expectation(&h, mid, mid + 1).re)));
        ChainState::Finite(st)
    } else {
        let chi = d.usize("chi", a.chi, 32)?;
        let mut opts = ItebdOptions { seed: d.usize("seed", a.seed.map(|s| s as usize), 11)? as u64, ..Default::default() };
        let sched = match a.schedule {
            Some(s) => Some(s),
            None => d.0.get("schedule").and_then(|v| v.as_str()).map(str::to_string),
        };
        if let Some(s) = sched {
            opts.schedule = parse_schedule(&s)?;
        }
        opts.tol = d.f64("tol", a.tol, opts.tol)?;
        let mps = itebd_ground_state(&hs, chi, &opts)?;
        rows.push(("chi".into(), chi.to_string()));
        rows.push(("energy_per_site".into(), fmt_num(mps.energy * scale)));
        rows.push(("sweeps".into(), mps.sweeps.to_string()));
        rows.push(("correlation_length".into(), fmt_num(mps.correlation_length())));
        if d.flag("mps_dump", a.mps_dump) {
            if sink.dir.is_none() {
                return Err(Error::Config("--mps-dump needs --out".into()));
            }
            let json = mps.to_json();
            sink.emit("mps.json", |w| Ok(w.write_all(json.as_bytes())?))?;
        }
        ChainState::Infinite(mps)
    };
    let limit = match &state {
        ChainState::Finite(f) => max_r.min(f.n - 1),
        ChainState::Infinite(_) => max_r,
    };
    let corr: Vec<String> = (0..=limit)
        .map(|r| correlator(&state, &op, r).map(|c| format!("{}:{}", r, fmt_num(c.re))))
        .collect::<Result<_>>()?;
    rows.push(("correlators".into(), format!("\"{}\"", corr.iter().join(" "))));
    let q = q_grid(d.usize("q_points", a.q_points, 200)?);
    let sf = structure_factor(&state, &op, &q, d.usize("cutoff", a.cutoff, 200)?)?;
    for w in &sf.warnings {
        sink.warn(w.clone());
    }
    if let Some((k, _)) = sf.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        rows.push(("sf_peak_q".into(), fmt_num(q[k])));
    }
    sink.report("chain_report.csv", &rows)?;
    sink.emit("structure_factor.csv", |w| sio::write_structure_factor(&sf, w))
}
