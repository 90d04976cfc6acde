fn main() {
    std::process::exit(cgvae::cli::run(std::env::args()));
}
