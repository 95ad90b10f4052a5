fn main() {
    std::process::exit(stagewise_cli::run(std::env::args_os()));
}
