fn main() {
    std::process::exit(latclass::cli::run(std::env::args().collect()));
}
