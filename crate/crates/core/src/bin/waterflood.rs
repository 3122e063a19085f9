fn main() {
    std::process::exit(waterflood::protocol::cli::main_with_args(std::env::args_os()));
}
