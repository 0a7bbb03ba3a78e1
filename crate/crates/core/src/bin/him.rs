fn main() -> std::process::ExitCode {
    him_core::cli::main()
}
