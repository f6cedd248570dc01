fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(fcdbn::cli::run_command(&argv));
}
