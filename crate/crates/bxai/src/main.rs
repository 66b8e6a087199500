fn main() {
    std::process::exit(bxai::cli::run(std::env::args_os()));
}
