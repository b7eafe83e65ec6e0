use std::process::ExitCode;

fn main() -> ExitCode {
    wcps::cli::main_with_args(std::env::args_os())
}
