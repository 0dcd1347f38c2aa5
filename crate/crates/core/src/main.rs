use clap::Parser;

fn main() {
    let cli = modsde::cli::Cli::parse();
    std::process::exit(modsde::cli::run(&cli));
}
