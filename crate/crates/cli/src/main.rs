use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = oobn_cli::run(&args, &mut stdin.lock(), &mut out, &mut err);
    out.flush().ok();
    ExitCode::from(code)
}
