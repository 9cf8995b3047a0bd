fn main() {
    std::process::exit(timekeeper_cli::main_with_args(std::env::args_os()));
}
