fn main() {
    std::process::exit(aquifer::cli::run(std::env::args_os()));
}
