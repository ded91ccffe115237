fn main() {
    std::process::exit(relplace_cli::run(std::env::args_os()));
}
