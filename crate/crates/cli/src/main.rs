use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = dtr_cli::Cli::parse();
    let mut stdout = std::io::stdout();
    match dtr_cli::run(cli, &mut stdout) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
