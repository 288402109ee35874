fn main() {
    std::process::exit(signgram::cli::run(std::env::args_os()));
}
