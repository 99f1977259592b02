//! Thin binary: all behavior lives in [`orthotrain::cli`].

fn main() {
    std::process::exit(orthotrain::cli::run_cli(std::env::args_os().skip(1)));
}
