fn main() {
    std::process::exit(electroinv_cli::main_with_args(std::env::args_os()));
}
