fn main() {
    std::process::exit(driftrisk::cli::run(std::env::args_os()));
}
