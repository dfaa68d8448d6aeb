use clap::Parser;

fn main() {
    let cli = prp_lab::cli::Cli::parse();
    std::process::exit(prp_lab::cli::dispatch(cli));
}
