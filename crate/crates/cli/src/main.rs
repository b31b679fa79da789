fn main() {
    std::process::exit(cdlab_cli::run(std::env::args()));
}
