fn main() {
    std::process::exit(snse_core::cli::run(std::env::args_os()));
}
