fn main() {
    std::process::exit(sfmk::pipeline::cli::run(std::env::args_os()));
}
