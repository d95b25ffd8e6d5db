use clap::Parser;
use metrimix::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
