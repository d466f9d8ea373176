use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(netmisfit::cli::run(std::env::args()) as u8)
}
