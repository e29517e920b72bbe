fn main() {
    std::process::exit(spatavg::cli::main_with(std::env::args_os()));
}
