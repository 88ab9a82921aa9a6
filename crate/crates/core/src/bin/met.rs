fn main() {
    std::process::exit(met_core::cli::run(std::env::args_os()));
}
