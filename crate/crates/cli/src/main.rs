fn main() {
    std::process::exit(cv2x_cli::run(std::env::args_os()));
}
