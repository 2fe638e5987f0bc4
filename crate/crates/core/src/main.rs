fn main() {
    std::process::exit(dbcl::cli::run(std::env::args_os()));
}
