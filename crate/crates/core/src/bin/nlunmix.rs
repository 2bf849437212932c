use std::process::ExitCode;

fn main() -> ExitCode {
    nlunmix::cli::init_logging();
    match nlunmix::cli::run_from(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
