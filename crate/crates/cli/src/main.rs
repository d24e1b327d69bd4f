use clap::Parser;

fn main() {
    let cli = bespoke_cli::Cli::parse();
    std::process::exit(bespoke_cli::run(cli));
}
