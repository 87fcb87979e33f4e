use clap::Parser;
use offsetlab::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(&cli) {
        eprintln!("offsetlab: {e}");
        std::process::exit(e.exit_code());
    }
}
