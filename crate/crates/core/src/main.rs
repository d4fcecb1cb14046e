fn main() {
    std::process::exit(fregmice::cli::run(std::env::args_os()));
}
