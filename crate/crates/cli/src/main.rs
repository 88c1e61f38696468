fn main() {
    std::process::exit(invpde_cli::run(std::env::args_os()));
}
