fn main() {
    std::process::exit(fusionnet::cli::main_with_args(std::env::args_os().collect()));
}
