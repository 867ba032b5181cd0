use std::process::ExitCode;

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    tpis_cli::cli::main_with_args(std::env::args_os())
}
