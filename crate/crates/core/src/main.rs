fn main() {
    std::process::exit(tcmdw_core::cli::run(std::env::args_os()));
}
