fn main() {
    std::process::exit(mmq_cli::run_command(std::env::args_os()));
}
