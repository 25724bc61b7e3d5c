fn main() {
    std::process::exit(covoc::cli::run(std::env::args_os()));
}
