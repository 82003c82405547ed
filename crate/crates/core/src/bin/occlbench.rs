fn main() {
    std::process::exit(occlbench::cli::main_with_args(std::env::args_os()));
}
