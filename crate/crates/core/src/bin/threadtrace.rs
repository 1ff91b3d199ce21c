fn main() {
    std::process::exit(threadtrace::cli::run(std::env::args_os()));
}
