fn main() {
    std::process::exit(decomp_cli::main_with_args(std::env::args_os()));
}
