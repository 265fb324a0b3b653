fn main() {
    std::process::exit(oodbound::harness::cli::cli_main(std::env::args_os()));
}
