use clap::Parser;

fn main() {
    let cli = artic_cli::Cli::parse();
    if let Err(err) = artic_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(artic_cli::exit_code(&err));
    }
}
