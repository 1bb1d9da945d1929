fn main() {
    std::process::exit(diffusion_core::cli::run(std::env::args_os()));
}
