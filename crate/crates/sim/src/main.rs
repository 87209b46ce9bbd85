fn main() {
    std::process::exit(hdpfl::cli::main_with_args(std::env::args_os()));
}
