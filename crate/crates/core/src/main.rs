fn main() {
    std::process::exit(mflqg::cli::cli_main(std::env::args_os()));
}
