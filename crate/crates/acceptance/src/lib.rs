//! Minimal runner for the acceptance suite.
//!
//! Each criterion is a function returning a [`Verdict`]; [`Suite::run`]
//! times it, turns errors and panics into failures, and prints one line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

#[derive(Default)]
pub struct Suite {
    results: Vec<(String, bool)>,
    filter: Option<String>,
}

impl Suite {
    /// Reads an optional name filter from the command line, as `cargo test
    /// --test acceptance -- <filter>` passes it.
    pub fn from_args() -> Self {
        let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
        Self { results: Vec::new(), filter }
    }

    pub fn run(&mut self, name: &str, budget_secs: f64, check: impl FnOnce() -> Outcome) {
        if self.filter.as_deref().is_some_and(|f| !name.contains(f)) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => (false, format!("panic: {}", panic_message(&p))),
        };
        let in_budget = secs <= budget_secs;
        let pass = pass && in_budget;
        let timing = if in_budget {
            format!("{secs:.1}s")
        } else {
            format!("{secs:.1}s, over the {budget_secs:.0}s budget")
        };
        println!("{} {name}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
        self.results.push((name.to_string(), pass));
    }

    /// Prints the tally and exits non-zero if anything failed.
    pub fn finish(self) -> ! {
        let failed: Vec<&str> = self.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
        println!(
            "acceptance: {} passed, {} failed{}",
            self.results.len() - failed.len(),
            failed.len(),
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
        );
        std::process::exit(if failed.is_empty() { 0 } else { 1 })
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic".into())
}
