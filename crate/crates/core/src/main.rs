use clap::Parser;

fn main() {
    let cli = trajgraph::harness::Cli::parse();
    std::process::exit(trajgraph::harness::run(cli));
}
