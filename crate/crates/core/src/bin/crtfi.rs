fn main() -> std::process::ExitCode {
    crtfi::cli::main()
}
