fn main() {
    hjbr::cli::init_logging();
    std::process::exit(hjbr::cli::main_with_args(std::env::args_os()));
}
