fn main() -> std::process::ExitCode {
    synee::cli::main()
}
