use std::process::ExitCode;

fn main() -> ExitCode {
    polymer_lab::cli::init_thread_pool();
    let code = polymer_lab::cli::run(std::env::args_os());
    ExitCode::from(code.clamp(0, 255) as u8)
}
