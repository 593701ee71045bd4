fn main() -> std::process::ExitCode {
    shieldgate::cli::main()
}
