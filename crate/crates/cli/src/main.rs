fn main() {
    std::process::exit(bundle_menu_cli::main_with_args(std::env::args_os()));
}
