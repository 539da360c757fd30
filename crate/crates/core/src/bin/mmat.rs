use clap::Parser;

fn main() {
    let cli = mmat::cli::Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = mmat::cli::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(mmat::cli::exit_code(&e));
    }
}
