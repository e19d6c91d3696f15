fn main() {
    std::process::exit(wavepolyp::cli::run(std::env::args_os()));
}
