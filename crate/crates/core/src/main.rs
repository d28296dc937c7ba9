fn main() {
    std::process::exit(sfde_pricing::cli::main_with_args(std::env::args_os()));
}
