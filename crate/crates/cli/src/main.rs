use clap::Parser;

fn main() {
    let cli = prefemo_cli::Cli::parse();
    let mut out = String::new();
    let code = prefemo_cli::execute(cli.command, &mut out);
    if code == prefemo_cli::EXIT_OK || code == prefemo_cli::EXIT_PARTIAL {
        print!("{out}");
    } else {
        eprint!("{out}");
    }
    std::process::exit(code);
}
