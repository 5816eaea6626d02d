fn main() {
    std::process::exit(decaylab_expyard::cli(std::env::args_os()));
}
