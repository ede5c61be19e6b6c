fn main() {
    std::process::exit(topoclass::cli::run_cli(std::env::args_os()));
}
