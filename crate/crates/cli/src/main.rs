use clap::Parser;

fn main() {
    let cli = binconv_cli::Cli::parse();
    if let Err(e) = binconv_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
