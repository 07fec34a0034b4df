fn main() {
    std::process::exit(ppap::cli::main_with_args(std::env::args_os()));
}
