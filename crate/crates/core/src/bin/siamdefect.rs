fn main() {
    std::process::exit(siamdefect::cli::main_with_args(std::env::args_os()));
}
