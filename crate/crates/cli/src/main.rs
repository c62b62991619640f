use std::process::ExitCode;

fn main() -> ExitCode {
    defectsim_cli::run()
}
