fn main() {
    std::process::exit(qsearch_cli::dispatch(std::env::args_os()));
}
