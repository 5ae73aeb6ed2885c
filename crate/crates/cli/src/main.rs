use std::process::ExitCode;

use clap::Parser;
use vulnhunter_cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
