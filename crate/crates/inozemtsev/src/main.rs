fn main() {
    std::process::exit(inozemtsev::cli::run(std::env::args().collect()));
}
