fn main() {
    std::process::exit(msalaa::cli::run());
}
