fn main() {
    std::process::exit(mmtsn::cli::run_from_args(std::env::args_os()));
}
