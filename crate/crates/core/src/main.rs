fn main() {
    std::process::exit(morphokit::cli::run(std::env::args_os()));
}
