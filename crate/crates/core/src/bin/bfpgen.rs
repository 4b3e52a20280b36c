use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bfp_textgen::cli::run(std::env::args_os()) as u8)
}
