use std::io::{self, Write};
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use gradshift::cli::{self, Cli};

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut err = io::stderr();
    let code = cli::run(cli, &mut out, &mut err).context("gradshift")?;
    out.flush()?;
    Ok(code)
}
