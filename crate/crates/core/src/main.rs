fn main() {
    let code = stepmoments::cli::run(std::env::args_os());
    std::process::exit(code);
}
