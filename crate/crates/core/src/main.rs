use clap::Parser;
use nlexit::cli::{execute, Args};
use nlexit::Error;

fn main() {
    let args = Args::parse();
    let code = match execute(&args) {
        Ok(report) => {
            if report.exit_code() != 0 {
                eprintln!("{}", serde_json::json!({ "verdict": report.verdict, "failures": report.failures }));
            }
            report.exit_code()
        }
        Err(Error::Config { pointer, message }) => {
            let err = serde_json::json!({ "error": "config", "pointer": pointer, "message": message });
            eprintln!("{err}");
            2
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": "run", "message": e.to_string() }));
            3
        }
    };
    std::process::exit(code);
}
