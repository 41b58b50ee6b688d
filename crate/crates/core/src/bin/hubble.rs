use clap::Parser;
use hubble_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
