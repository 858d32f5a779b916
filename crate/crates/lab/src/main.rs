fn main() {
    std::process::exit(damage_lab::cli::run(std::env::args_os()));
}
