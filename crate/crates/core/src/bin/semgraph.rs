fn main() {
    std::process::exit(semgraph::cli::cli_main(std::env::args_os()));
}
