//! Prints one PASS/FAIL line per acceptance criterion and fails if any criterion fails.

fn main() {
    let reports = hillspec_cli::verify::run_all(|r| println!("{}", r.line()));
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("{passed} of {} criteria passed", reports.len());
    if passed != reports.len() {
        std::process::exit(1);
    }
}
