fn main() {
    std::process::exit(arlab::cli::main_with_args(std::env::args_os()));
}
