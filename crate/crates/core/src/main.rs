use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UARL_LOG", "warn")).init();
    let cli = uarl::cli::Cli::parse();
    std::process::exit(uarl::cli::run(cli));
}
