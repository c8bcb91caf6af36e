fn main() {
    std::process::exit(csvl::cli::main_with(std::env::args_os()));
}
