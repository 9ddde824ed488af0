use std::process::ExitCode;

/// Restore default SIGPIPE handling so piping into `head` or a closed
/// pager kills the process quietly instead of panicking on a failed
/// stdout write. Rust's runtime ignores SIGPIPE by default.
#[cfg(unix)]
fn restore_sigpipe() {
    // SAFETY: SIG_DFL installs the default disposition; no handler
    // code runs, so there are no reentrancy or aliasing concerns.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn restore_sigpipe() {}

fn main() -> ExitCode {
    restore_sigpipe();
    ExitCode::from(cpl_lab::cli::dispatch(std::env::args_os()) as u8)
}
