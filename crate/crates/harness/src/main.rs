use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ppf_harness::cli::main(std::env::args_os()))
}
