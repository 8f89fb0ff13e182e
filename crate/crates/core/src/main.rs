fn main() {
    std::process::exit(tabgen::cli::main_entry(std::env::args_os()));
}
