fn main() {
    std::process::exit(qgen::cli::dispatch(std::env::args_os()));
}
