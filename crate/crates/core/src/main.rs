fn main() {
    std::process::exit(glsteady::cli::run());
}
