fn main() -> std::process::ExitCode {
    btcnn::cli::main_entry()
}
