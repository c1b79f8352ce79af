fn main() {
    std::process::exit(vaekit_cli::cli_main());
}
