fn main() {
    std::process::exit(swiftlearn::harness::main_with_args(std::env::args_os()));
}
