//! Pass/fail bookkeeping for the acceptance run: criterion selection from
//! command-line filters, one summary line per criterion and the exit status.

use std::fmt;
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Result of evaluating one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: String,
    pub name: String,
    pub verdict: Verdict,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<3} {:<24} [{:>7.1}s] {}",
            if self.verdict.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.verdict.detail
        )
    }
}

/// Runs the selected criteria in order and prints a line for each as soon as
/// it finishes.
#[derive(Debug, Default)]
pub struct Checklist {
    filters: Vec<String>,
    outcomes: Vec<Outcome>,
}

impl Checklist {
    /// Arguments starting with `-` are ignored so that flags the test runner
    /// forwards to every target do not deselect anything.
    pub fn from_args<I: IntoIterator<Item = String>>(args: I) -> Self {
        Self {
            filters: args.into_iter().filter(|a| !a.starts_with('-')).collect(),
            outcomes: Vec::new(),
        }
    }

    pub fn selects(&self, id: &str, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| f == id || name.contains(f.as_str()))
    }

    /// Evaluates `check` if selected. An `Err` counts as a failure.
    pub fn run<F>(&mut self, id: &str, name: &str, check: F)
    where
        F: FnOnce() -> Result<Verdict, String>,
    {
        if !self.selects(id, name) {
            return;
        }
        let start = Instant::now();
        let verdict = check().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let outcome = Outcome {
            id: id.to_string(),
            name: name.to_string(),
            verdict,
            elapsed: start.elapsed(),
        };
        println!("{outcome}");
        self.outcomes.push(outcome);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.verdict.passed).count()
    }

    /// Prints the tally; failure when any criterion failed.
    pub fn finish(self) -> ExitCode {
        let failed = self.failures();
        println!("\n{} passed, {} failed", self.outcomes.len() - failed, failed);
        if failed == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}
