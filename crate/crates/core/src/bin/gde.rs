fn main() {
    std::process::exit(gdino::cli::run_cli(std::env::args_os()));
}
