fn main() {
    std::process::exit(deepcars::cli::run(std::env::args_os()));
}
