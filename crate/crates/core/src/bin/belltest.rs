fn main() {
    std::process::exit(belltest::cli::main());
}
