fn main() {
    std::process::exit(sparse_drift::cli::dispatch(std::env::args_os()));
}
