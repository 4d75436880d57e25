fn main() {
    std::process::exit(anytsr_cli::run(std::env::args_os()));
}
