use clap::Parser;
use mpfc_cli::{execute, Cli};

fn main() {
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
