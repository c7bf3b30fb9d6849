use clap::Parser;

fn main() {
    let cli = onebit::cli::Cli::parse();
    if let Err(e) = onebit::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
