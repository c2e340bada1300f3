use std::process::ExitCode;

fn main() -> ExitCode {
    detctl::main_with_args(std::env::args_os())
}
