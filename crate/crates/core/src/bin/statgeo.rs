fn main() {
    std::process::exit(statgeo::cli::run(std::env::args_os()));
}
