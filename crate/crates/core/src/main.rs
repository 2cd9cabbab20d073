fn main() {
    std::process::exit(protogroup::cli::main_with_args(std::env::args_os()));
}
