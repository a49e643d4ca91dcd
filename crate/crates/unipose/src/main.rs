fn main() {
    std::process::exit(unipose::cli::run(std::env::args_os()));
}
