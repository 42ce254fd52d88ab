fn main() -> std::process::ExitCode {
    upmix::cli::main()
}
