fn main() -> std::process::ExitCode {
    knowprobe::cli::main()
}
