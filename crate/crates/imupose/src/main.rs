use std::process::ExitCode;

fn main() -> ExitCode {
    imupose::cli::run()
}
