fn main() {
    std::process::exit(gravimet::cli::main_exit_code());
}
