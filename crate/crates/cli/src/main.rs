fn main() {
    std::process::exit(mspca_cli::run(std::env::args_os().collect()));
}
