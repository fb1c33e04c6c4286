fn main() {
    std::process::exit(klv_cli::run(std::env::args_os()));
}
