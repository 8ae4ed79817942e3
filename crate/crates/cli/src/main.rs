use std::process::ExitCode;

use clap::Parser;
use satde_cli::{parse_config, run, Args};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = parse_config(&args).and_then(|cfg| {
        let outcome = run(&cfg)?;
        // keep stdout clean when it carries the data
        if cfg.out.is_some() {
            println!("{}", outcome.summary);
        } else {
            eprintln!("{}", outcome.summary);
        }
        Ok(outcome.exit_code())
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
