fn main() -> std::process::ExitCode {
    fedshield::cli::main()
}
