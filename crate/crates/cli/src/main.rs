use clap::Parser;

use rbe_cli::commands::{run, Cli};
use rbe_cli::exit;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(err) = run(cli) {
        eprintln!("error: {}", exit::describe(&err));
        std::process::exit(exit::code_for(&err));
    }
    std::process::exit(exit::OK);
}
