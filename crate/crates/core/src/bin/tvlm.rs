fn main() {
    std::process::exit(tvlm::cli::run());
}
