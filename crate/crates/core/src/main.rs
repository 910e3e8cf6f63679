fn main() {
    std::process::exit(helmdiff::cli::main());
}
