fn main() {
    std::process::exit(echoscat::cli::main_entry());
}
