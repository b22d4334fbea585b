fn main() {
    std::process::exit(panco::cli::main());
}
