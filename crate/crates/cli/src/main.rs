use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let outcome = dichotomy_cli::run(std::env::args_os());
    match &outcome.out_path {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &outcome.output) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => {
            let _ = std::io::stdout().write_all(outcome.output.as_bytes());
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
