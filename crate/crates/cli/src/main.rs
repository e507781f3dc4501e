use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(listereo_cli::run(std::env::args_os()) as u8)
}
