fn main() {
    std::process::exit(atelier::cli::main_with_args(std::env::args_os().collect()));
}
