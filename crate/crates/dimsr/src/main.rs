use std::process::ExitCode;

fn main() -> ExitCode {
    dimsr::cli::main()
}
