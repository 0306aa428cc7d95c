fn main() {
    std::process::exit(qla_core::cli::run(std::env::args_os()));
}
