fn main() {
    std::process::exit(ostar::cli::run(std::env::args_os()));
}
