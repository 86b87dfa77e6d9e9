fn main() {
    std::process::exit(brokersim::cli::run(std::env::args_os()));
}
