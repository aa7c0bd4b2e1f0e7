fn main() {
    std::process::exit(gripforge::cli::run(std::env::args_os()));
}
