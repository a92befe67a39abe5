fn main() {
    std::process::exit(fovea_cli::run_cli(std::env::args_os()));
}
