fn main() {
    std::process::exit(bslrec::cli::run(std::env::args_os()));
}
