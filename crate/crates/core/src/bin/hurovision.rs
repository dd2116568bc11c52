fn main() -> std::process::ExitCode {
    hurovision::cli::main()
}
