fn main() {
    std::process::exit(gnas_core::cli::run(std::env::args_os()));
}
