fn main() {
    std::process::exit(gramdet::cli::main_with(std::env::args_os()));
}
