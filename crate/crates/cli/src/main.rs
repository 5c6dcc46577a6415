use clap::Parser;

fn main() {
    let cli = jmrp_cli::Cli::parse();
    if let Err(e) = jmrp_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
