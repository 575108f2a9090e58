fn main() {
    std::process::exit(cakecut::cli::run(std::env::args_os()));
}
