use clap::Parser;

fn main() {
    let args = dcot::cli::Cli::parse();
    if let Err(err) = dcot::cli::run(args) {
        eprintln!(
            "{}",
            serde_json::json!({"error": err.to_string(), "code": error_code(&err)})
        );
        std::process::exit(1);
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<dcot::config::ConfigError>().is_some() {
        "CONFIG_INVALID"
    } else {
        "RUN_FAILED"
    }
}
