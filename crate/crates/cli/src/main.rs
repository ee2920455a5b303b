fn main() {
    std::process::exit(bathywave_cli::run_command(std::env::args_os()));
}
