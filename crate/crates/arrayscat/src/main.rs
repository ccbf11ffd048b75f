use clap::Parser;

fn main() {
    let cli = arrayscat::cli::Cli::parse();
    if let Err(e) = arrayscat::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
