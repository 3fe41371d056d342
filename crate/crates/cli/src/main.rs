fn main() {
    std::process::exit(vsr_cli::cli_dispatch(std::env::args()));
}
