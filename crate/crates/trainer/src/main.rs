fn main() {
    std::process::exit(headfield::cli::run(std::env::args_os()));
}
