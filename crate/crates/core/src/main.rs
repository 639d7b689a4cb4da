fn main() {
    std::process::exit(moralframes::cli::main());
}
