fn main() {
    std::process::exit(scenecam::cli::main_with_args(std::env::args_os()));
}
