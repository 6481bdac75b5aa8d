fn main() {
    std::process::exit(tempo::cli::run());
}
