fn main() {
    std::process::exit(ihcq::cli::run(std::env::args_os()));
}
