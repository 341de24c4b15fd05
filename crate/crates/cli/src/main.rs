fn main() {
    std::process::exit(udainv_cli::run(std::env::args_os()));
}
