fn main() {
    std::process::exit(emla_core::cli::main_with(std::env::args_os()));
}
