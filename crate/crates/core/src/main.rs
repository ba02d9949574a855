fn main() {
    std::process::exit(advgrad::cli::cli_main(std::env::args_os()));
}
