fn main() {
    std::process::exit(rokdeepc::cli::run(std::env::args_os()));
}
