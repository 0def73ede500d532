fn main() {
    std::process::exit(mirt::cli::run());
}
