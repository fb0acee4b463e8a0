fn main() {
    std::process::exit(mlnc::cli_io::run_cli(std::env::args_os()));
}
