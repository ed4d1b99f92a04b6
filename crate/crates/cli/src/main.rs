mod args;
mod commands;
mod config;
mod error;

use clap::Parser;

fn main() {
    let cli = args::Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("{e}");
        std::process::exit(e.class.exit_code());
    }
}
