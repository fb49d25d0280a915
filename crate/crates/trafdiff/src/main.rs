//! Command-line entry point.

fn main() {
    std::process::exit(trafdiff::cli_main());
}
