use clap::Parser;
use tfdw_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let report = serde_json::json!({"kind": "config", "message": e.to_string(), "exit_code": 2});
            eprintln!("{report}");
            std::process::exit(2);
        }
    };
    match run(&cli) {
        Ok(summary) => println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default()),
        Err(e) => {
            eprintln!("{}", e.report());
            std::process::exit(e.exit_code());
        }
    }
}
