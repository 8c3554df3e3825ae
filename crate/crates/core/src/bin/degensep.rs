fn main() {
    std::process::exit(degensep::cli::main_with_args(std::env::args_os()));
}
