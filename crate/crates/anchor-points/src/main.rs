use clap::Parser;

fn main() {
    let cli = anchor_points::cli::Cli::parse();
    std::process::exit(anchor_points::cli::run(cli));
}
