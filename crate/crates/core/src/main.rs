fn main() {
    std::process::exit(photocal::cli::run(std::env::args_os()));
}
