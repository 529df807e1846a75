fn main() {
    std::process::exit(resprop::cli::main_with_args(std::env::args_os()));
}
