fn main() -> std::process::ExitCode {
    paralab::cli::main()
}
