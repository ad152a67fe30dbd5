fn main() {
    std::process::exit(audformer::cli::run(std::env::args_os()));
}
