fn main() {
    std::process::exit(eels_cvae::cli::run(std::env::args_os()));
}
