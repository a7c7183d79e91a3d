fn main() {
    std::process::exit(rosu::cli::cli_main(std::env::args_os()));
}
