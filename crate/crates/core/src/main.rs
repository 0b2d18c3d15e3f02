fn main() {
    std::process::exit(edaseg::cli::dispatch(std::env::args_os()));
}
