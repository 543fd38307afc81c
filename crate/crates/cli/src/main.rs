use clap::Parser;

fn main() {
    let cli = vlcd_cli::cli::Cli::parse();
    if let Err(e) = vlcd_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
