fn main() {
    std::process::exit(vfd::cli::main_with(std::env::args_os()));
}
