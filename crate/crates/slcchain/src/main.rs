fn main() {
    std::process::exit(slcchain::cli::main_exit_code());
}
