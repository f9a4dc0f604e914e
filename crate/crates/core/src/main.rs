fn main() -> std::process::ExitCode {
    aspectcue::cli::main()
}
