fn main() {
    // fixed level; the tool reads no environment variables
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .init();
    std::process::exit(planar_calib::cli::run_from_args(std::env::args_os()));
}
