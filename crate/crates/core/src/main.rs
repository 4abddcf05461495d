fn main() {
    std::process::exit(survrank::cli::main_with(std::env::args_os()));
}
