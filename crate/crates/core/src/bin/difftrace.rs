fn main() {
    std::process::exit(difftrace::cli::main_with_args(std::env::args().collect()));
}
