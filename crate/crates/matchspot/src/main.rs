fn main() {
    std::process::exit(matchspot::cli::run());
}
