fn main() -> std::process::ExitCode {
    lsdan::cli::main()
}
