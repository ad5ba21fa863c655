fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSM_LOG", "warn")).init();
    std::process::exit(dsm_cli::cli::run(std::env::args_os()));
}
