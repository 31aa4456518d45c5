use clap::Parser;

fn main() {
    let cli = eagle::cli::Cli::parse();
    std::process::exit(eagle::cli::run(cli));
}
