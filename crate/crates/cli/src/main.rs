use clap::Parser;

fn main() {
    let cli = idsq_cli::Cli::parse();
    std::process::exit(idsq_cli::run(&cli));
}
