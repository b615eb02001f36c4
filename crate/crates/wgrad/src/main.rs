use clap::{CommandFactory, Parser};
use wgrad::cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                eprintln!("\n{}", usage());
            }
            std::process::exit(code);
        }
    };
    if let Err(e) = wgrad::commands::dispatch(&cli.command) {
        eprintln!("error: {e}");
        if e.exit_code() == 2 {
            eprintln!("\n{}", usage());
        }
        std::process::exit(e.exit_code());
    }
}

/// Usage line of the subcommand named on the command line, if any.
fn usage() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let name = std::env::args().nth(1).unwrap_or_default();
    match cmd.find_subcommand_mut(&name) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}
