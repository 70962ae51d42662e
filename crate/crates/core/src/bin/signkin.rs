fn main() {
    std::process::exit(signkin::cli::main_with_args(std::env::args_os()));
}
