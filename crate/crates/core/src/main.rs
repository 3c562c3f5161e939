fn main() {
    std::process::exit(ddm::commands::main_with_args(std::env::args_os()));
}
