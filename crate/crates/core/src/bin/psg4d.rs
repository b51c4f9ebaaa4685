fn main() {
    std::process::exit(psg4d_core::cli::main());
}
