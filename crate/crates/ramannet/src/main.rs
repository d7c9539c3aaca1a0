fn main() {
    std::process::exit(ramannet::cli::main_with(std::env::args_os()));
}
