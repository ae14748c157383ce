fn main() {
    std::process::exit(clkinetic::cli::main_entry(std::env::args_os()));
}
