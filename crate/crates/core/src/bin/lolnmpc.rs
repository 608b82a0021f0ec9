fn main() {
    std::process::exit(lolnmpc::cli::run_cli(std::env::args_os()));
}
