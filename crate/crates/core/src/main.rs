fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NAIL_LAB_LOG", "warn")).init();
    std::process::exit(nail_lab::cli::run(std::env::args_os()));
}
