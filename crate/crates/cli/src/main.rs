fn main() {
    // Die quietly when a downstream pipe closes (e.g. `plot ... | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(plot_cli::run());
}
