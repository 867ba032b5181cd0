//! Runner for acceptance criteria. Each criterion is timed against its
//! budget and reported on one PASS/FAIL line.

use std::process::ExitCode;
use std::time::{Duration, Instant};

/// `Ok(detail)` on pass, `Err(detail)` on failure.
pub type Outcome = Result<String, String>;

pub fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

#[derive(Debug, Default)]
pub struct Suite {
    lines: Vec<String>,
    failed: usize,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs and records one criterion.
    pub fn run(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let outcome = f();
        self.record(name, budget, t.elapsed(), outcome);
    }

    /// Records a criterion computed elsewhere. Exceeding the budget fails it.
    pub fn record(&mut self, name: &str, budget: Option<Duration>, elapsed: Duration, outcome: Outcome) {
        let outcome = match (outcome, budget) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, budget {limit:?}")),
            (other, _) => other,
        };
        let line = match outcome {
            Ok(detail) => format!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                self.failed += 1;
                format!("FAIL  {name}: {detail} [{elapsed:.2?}]")
            }
        };
        println!("{line}");
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn failed(&self) -> usize {
        self.failed
    }

    pub fn finish(self) -> ExitCode {
        let total = self.lines.len();
        if self.failed == 0 {
            println!("acceptance: {total} of {total} criteria passed");
            ExitCode::SUCCESS
        } else {
            println!("acceptance: {} of {total} criteria failed", self.failed);
            ExitCode::FAILURE
        }
    }
}
