use clap::Parser;

fn main() {
    let cli = v2v_cli::Cli::parse();
    if let Err(e) = v2v_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
