fn main() {
    std::process::exit(hamlearn_cli::run(std::env::args()));
}
