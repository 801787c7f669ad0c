use tracing_subscriber::EnvFilter;

fn main() {
    let verbose = std::env::args().any(|a| a == "--verbose" || a == "-v");
    let default = if verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();
    std::process::exit(artifact_cli::run(std::env::args_os()));
}
