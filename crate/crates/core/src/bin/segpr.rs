fn main() {
    std::process::exit(segpr::cli::main_with(std::env::args_os()));
}
