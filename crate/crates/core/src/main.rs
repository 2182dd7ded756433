fn main() -> std::process::ExitCode {
    paegan::cli::run_from(std::env::args_os())
}
