fn main() {
    std::process::exit(lbtk::cli::main_impl());
}
