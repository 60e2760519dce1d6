use clap::Parser;

fn main() {
    let cli = relmem::cli::Cli::parse();
    if let Err(e) = relmem::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
