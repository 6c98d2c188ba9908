fn main() {
    std::process::exit(stemos::cli::run());
}
