fn main() {
    std::process::exit(gridsec::cli::main_entry());
}
