use clap::Parser;

fn main() {
    let cli = dsparse_cli::args::Cli::parse();
    if let Err(e) = dsparse_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
