fn main() {
    std::process::exit(fspronto_cli::run(std::env::args_os()));
}
