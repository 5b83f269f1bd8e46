fn main() {
    std::process::exit(perftx::cli::run(std::env::args_os()));
}
