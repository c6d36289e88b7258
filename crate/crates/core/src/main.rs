fn main() {
    std::process::exit(mobgp::cli::run(std::env::args_os()));
}
