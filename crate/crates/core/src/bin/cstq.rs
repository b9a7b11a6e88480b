use clap::Parser;

fn main() {
    std::process::exit(cstq::cli::run(cstq::cli::Cli::parse()));
}
