use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(hqp_core::cli::run_cli(std::env::args_os(), &mut std::io::stdout()))
}
