fn main() {
    std::process::exit(attngcn::cli::main_from(std::env::args_os()));
}
