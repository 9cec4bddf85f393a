use clap::Parser;

fn main() {
    // Usage errors exit 1; clap's help/version output exits 0.
    let cli = match orbitax_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(orbitax_cli::run(cli));
}
