use clap::Parser;

use ssbdiff::cli::{self, Cli};

fn main() {
    let args = Cli::parse();
    if let Err(e) = cli::run(&args) {
        eprintln!("ssbdiff: {}", e.summary());
        std::process::exit(e.exit_code());
    }
}
