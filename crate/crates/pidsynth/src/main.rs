fn main() {
    std::process::exit(pidsynth::run(std::env::args_os()));
}
