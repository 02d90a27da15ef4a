fn main() {
    std::process::exit(cellforest_cli::run(std::env::args_os()));
}
