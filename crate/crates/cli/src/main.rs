fn main() {
    std::process::exit(eoli_cli::run_cli(std::env::args_os()));
}
