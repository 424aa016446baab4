fn main() {
    std::process::exit(adaptseg_cli::run(std::env::args_os()));
}
