fn main() {
    std::process::exit(mementomap::cli::run(std::env::args_os()));
}
