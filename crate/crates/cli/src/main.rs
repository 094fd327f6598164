fn main() {
    std::process::exit(deblur_cli::run(std::env::args_os()));
}
