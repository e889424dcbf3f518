fn main() {
    std::process::exit(wingfit_cli::run(std::env::args_os()));
}
