fn main() -> std::process::ExitCode {
    pyramil::cli::main()
}
