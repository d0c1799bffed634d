fn main() {
    std::process::exit(pila_cli::run(std::env::args_os()));
}
