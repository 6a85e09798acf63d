//! Hyperfine spectroscopy, dipole-dipole pair potentials and microwave-dressed
//! spin-1 interactions of trapped ²Σ polar molecules, with tools to design
//! field sets toward bilinear-biquadratic chains and to verify the resulting
//! many-body ground states.

pub mod angular;
pub mod chain;
pub mod designer;
pub mod effective;
pub mod error;
pub mod io;
pub mod molecule;
pub mod pairpot;

pub use error::{Error, Result};

/// Caps the global thread pool at `SPIN1_FORGE_THREADS` when set. Safe to
/// call more than once; only the first call has an effect.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SPIN1_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SPIN1_FORGE_THREADS must be a positive integer, got '{v}'")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
