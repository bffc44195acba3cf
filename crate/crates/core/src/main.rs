fn main() {
    std::process::exit(crossvote::cli::run_from(std::env::args_os()));
}
