fn main() {
    std::process::exit(gmspec::cli::run(std::env::args_os()));
}
