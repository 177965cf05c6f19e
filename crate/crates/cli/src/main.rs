use clap::error::ErrorKind;
use clap::Parser;

mod cli;
mod config;
mod error;
mod persist;
mod run;

fn main() {
    // clap reserves exit code 2 for usage errors; the contract here is 1 for
    // any configuration problem, so parse failures are reclassified.
    let parsed = match cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = run::run(parsed) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
