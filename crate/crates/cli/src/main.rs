use clap::Parser;
use lumisplit_cli::{app, Cli};
use lumisplit_core::par;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("LUMISPLIT_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => par::init_global(n),
            _ => log::warn!("ignoring LUMISPLIT_THREADS={v:?}"),
        }
    }
    let cli = Cli::parse();
    if let Err(e) = app::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
    std::process::exit(app::EXIT_OK);
}
