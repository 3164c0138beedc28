fn main() {
    std::process::exit(dudomar::cli::run(std::env::args_os()));
}
