fn main() {
    std::process::exit(mcn_cli::main_with(std::env::args_os()));
}
