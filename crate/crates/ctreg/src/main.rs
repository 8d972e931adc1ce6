fn main() {
    std::process::exit(ctreg::cli::cli_main(std::env::args_os()));
}
