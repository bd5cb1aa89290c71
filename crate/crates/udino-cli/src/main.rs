use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(udino_cli::run_from_args(std::env::args()) as u8)
}
