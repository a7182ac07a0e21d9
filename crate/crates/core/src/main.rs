fn main() {
    std::process::exit(hmjnd::cli::run(std::env::args_os()));
}
