fn main() {
    std::process::exit(trx::cli::main_with_args(std::env::args_os().collect()));
}
