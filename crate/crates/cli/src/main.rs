fn main() {
    std::process::exit(fosr_cli::run(std::env::args_os()));
}
