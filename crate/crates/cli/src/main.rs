use clap::Parser;
use tensor_lift_cli::{configure_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|()| run(cli)) {
        eprintln!("tensor-lift: {e}");
        std::process::exit(e.failure.exit_code());
    }
}
