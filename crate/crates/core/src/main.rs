fn main() {
    std::process::exit(sentvae::cli::dispatch(std::env::args()));
}
