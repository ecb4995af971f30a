fn main() {
    // Large grid arrays are allocated and dropped constantly; keep them on
    // the heap instead of round-tripping through mmap.
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 25);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
    std::process::exit(lsi_core::cli::main_with(std::env::args_os()));
}
