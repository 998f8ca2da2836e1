fn main() {
    std::process::exit(sglab::cli::main_with_args(std::env::args_os()));
}
