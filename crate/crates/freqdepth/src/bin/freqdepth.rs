use clap::Parser;

fn main() {
    let cli = freqdepth::cli::Cli::parse();
    if let Err(e) = freqdepth::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
