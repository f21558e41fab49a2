fn main() {
    std::process::exit(realloc_nas::cli::run(std::env::args_os()));
}
