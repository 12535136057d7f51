fn main() {
    std::process::exit(ragbench::cli::run(std::env::args_os()));
}
