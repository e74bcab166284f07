fn main() {
    env_logger::init();
    std::process::exit(paff::harness::cli_main(std::env::args_os()));
}
