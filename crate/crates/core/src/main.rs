fn main() {
    std::process::exit(mtkd::cli::run(std::env::args_os()));
}
