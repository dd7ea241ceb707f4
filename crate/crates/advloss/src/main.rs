use clap::Parser;

fn main() {
    let cli = advloss::cli::Cli::parse();
    if let Err(e) = advloss::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
