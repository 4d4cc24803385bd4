use clap::Parser;
use misclass_cli::{run, Cli, RunConfig};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let (command, flags) = cli.command.split();
    let code = match RunConfig::resolve(command, flags) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.name());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
