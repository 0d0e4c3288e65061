fn main() {
    std::process::exit(wafersim_cli::dispatch(std::env::args_os()));
}
