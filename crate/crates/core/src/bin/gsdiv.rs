fn main() {
    std::process::exit(goldschmidt_core::harness::main_with_args(std::env::args_os()));
}
