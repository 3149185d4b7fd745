fn main() {
    std::process::exit(supercone::cli::run(std::env::args_os()));
}
