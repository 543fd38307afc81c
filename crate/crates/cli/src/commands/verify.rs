use std::time::Instant;

use crate::cli::VerifyArgs;
use crate::error::CliError;
use crate::verify::run_battery;

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    if args.cases == 0 {
        return Err(CliError::Config("--cases must be >= 1".into()));
    }
    let start = Instant::now();
    let results = run_battery(args.cases, args.inject_fault);
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!(
        "{} of {} checks passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
