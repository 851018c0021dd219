fn main() {
    std::process::exit(pat_cli::main_with_args(std::env::args_os()));
}
