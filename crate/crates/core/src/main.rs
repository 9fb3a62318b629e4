fn main() {
    std::process::exit(anwm_core::cli::dispatch(std::env::args_os()));
}
