fn main() {
    sparsity_bhm::cli::init_logging();
    std::process::exit(sparsity_bhm::cli::run(std::env::args_os()));
}
