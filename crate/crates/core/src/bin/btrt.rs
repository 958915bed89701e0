fn main() {
    std::process::exit(btrt::cli::run_cli(std::env::args_os()));
}
