fn main() {
    std::process::exit(replan::harness::run_experiment(std::env::args_os()));
}
