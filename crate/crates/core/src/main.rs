fn main() {
    std::process::exit(thermo_core::cli::main_from_env());
}
