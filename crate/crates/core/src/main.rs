fn main() {
    std::process::exit(sensguard::cli::run(std::env::args_os()));
}
