use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cfdnet_cli::run(std::env::args_os()) as u8)
}
