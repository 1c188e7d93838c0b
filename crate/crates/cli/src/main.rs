fn main() {
    std::process::exit(bsde_cli::main_with_args(std::env::args_os()));
}
