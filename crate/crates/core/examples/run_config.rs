//! Runs a JSON config the way `skorokhod solve` does and prints the report
//! location. Defaults to `configs/atom_at_zero.json`.

use std::path::PathBuf;

use skorokhod::cli::{self, LoadedConfig};

fn main() -> skorokhod::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/atom_at_zero.json"));
    let cfg = LoadedConfig::load(&path)?;
    let out = if cfg.config.transport.is_some() {
        cli::bounds(&cfg)?
    } else {
        cli::solve(&cfg)?
    };
    println!("{}", out.summary);
    std::process::exit(out.code);
}
