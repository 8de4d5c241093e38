fn main() {
    std::process::exit(sar2eo::cli::run(std::env::args_os()));
}
