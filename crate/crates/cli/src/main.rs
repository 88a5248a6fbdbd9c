use tracing_subscriber::filter::LevelFilter;

fn main() {
    let level = std::env::var("RUST_LOG").ok().and_then(|v| v.parse().ok()).unwrap_or(LevelFilter::WARN);
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
    std::process::exit(kgcal_cli::run(std::env::args_os()));
}
