fn main() {
    std::process::exit(screening_aft::cli::main_with_args(std::env::args_os()));
}
