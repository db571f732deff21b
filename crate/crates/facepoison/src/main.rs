use facepoison::cli::{run, Adapters};

fn main() {
    if let Err(e) = run(std::env::args_os(), &Adapters::default()) {
        e.report();
        std::process::exit(e.exit_code());
    }
}
