fn main() {
    std::process::exit(strokeforge_cli::cli::run(std::env::args_os()));
}
