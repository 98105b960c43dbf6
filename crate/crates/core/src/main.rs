fn main() -> std::process::ExitCode {
    cryotherm::cli::main_entry()
}
