fn main() {
    std::process::exit(adgnn::harness::cli::cli_main(std::env::args_os()));
}
