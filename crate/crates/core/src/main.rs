fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(polymm::cli::run_command(&args));
}
