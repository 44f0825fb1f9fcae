use clap::Parser;
use fovreg_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = fovreg_cli::commands::run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
