fn main() {
    std::process::exit(labelsynth_cli::run(std::env::args_os()));
}
