fn main() {
    std::process::exit(edgenas_cli::cli_dispatch(std::env::args_os()));
}
