fn main() {
    std::process::exit(dyadface::cli::main_with_args(std::env::args().collect()));
}
