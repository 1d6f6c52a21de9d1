fn main() {
    std::process::exit(dice::cli::main_with_args(std::env::args_os()));
}
