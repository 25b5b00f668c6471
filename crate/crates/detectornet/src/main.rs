fn main() {
    std::process::exit(detectornet::cli::run_command(std::env::args()));
}
