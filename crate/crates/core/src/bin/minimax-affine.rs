use clap::Parser;
use minimax_affine::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
