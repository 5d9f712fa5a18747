use clap::Parser;

fn main() {
    let cli = minit::cli::Cli::parse();
    if let Err(e) = minit::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
