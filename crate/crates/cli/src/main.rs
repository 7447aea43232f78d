fn main() {
    std::process::exit(pitchmap_cli::main_with_args(std::env::args_os()));
}
