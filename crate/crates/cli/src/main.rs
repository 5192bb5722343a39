fn main() {
    std::process::exit(cmvt_cli::run_cli(std::env::args_os()));
}
