//! Acceptance gate: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p dalign-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::checks::{self, Check};
use common::{desk_run, DeskConfig};

struct Gate {
    failures: usize,
}

impl Gate {
    fn run(&mut self, name: &str, budget: Duration, check: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {took:.1?}, budget {budget:?}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            self.failures += 1;
        }
        println!("[{status}] {name} ({took:.2?}): {detail}");
    }
}

fn ratio_line(run: &common::DeskRun, method: &str) -> (f64, f64, f64) {
    let planted = run.planted.methods[method].mean_da.unwrap_or(0.0);
    let control = run.control.methods[method].mean_da.unwrap_or(0.0);
    (planted, control, planted / control)
}

fn end_to_end() -> Check {
    let run = desk_run(&DeskConfig::default());
    let mut parts = vec![format!("test F1 {:.3} (best epoch {})", run.test_f1, run.best_epoch)];
    let mut ok = run.test_f1 >= 0.95;
    for m in ["attention-first", "attention-last"] {
        let (p, c, r) = ratio_line(&run, m);
        ok &= r >= 2.0;
        parts.push(format!("{m} DA {p:.3} vs control {c:.3} ({r:.1}x)"));
    }
    let ig = run.planted.methods["integrated-gradients"].mean_da;
    ok &= ig.is_some_and(|d| (0.0..=1.0).contains(&d));
    parts.push(format!("integrated-gradients DA {:.3}", ig.unwrap_or(f64::NAN)));
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Not gated: the same run with two encoder layers, for the record.
fn two_layer_report() {
    let run = desk_run(&DeskConfig {
        layers: 2,
        ..DeskConfig::default()
    });
    let parts: Vec<String> = ["attention-first", "attention-last", "integrated-gradients"]
        .iter()
        .map(|m| {
            let (p, c, r) = ratio_line(&run, m);
            format!("{m} {p:.3}/{c:.3} ({r:.1}x)")
        })
        .collect();
    println!("[INFO] two-layer desk run, test F1 {:.3}: {}", run.test_f1, parts.join("; "));
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let mut gate = Gate { failures: 0 };
    let (jaccard, zero) = checks::worked_examples();
    gate.run("Jaccard worked example", s(1), || jaccard);
    gate.run("zero-overlap worked example", s(1), || zero);
    gate.run("benign rule", s(1), || checks::benign_rule(1000, 1));
    gate.run("DA invariant suite", s(5), || checks::da_invariants(10_000, 2));
    gate.run("microformer gradient check", s(30), || checks::gradient_check(100, 3));
    gate.run("IG completeness and convergence", s(60), || checks::ig_completeness(20, 4));
    gate.run("attention conservation", s(1), || checks::attention_conservation(200, 5));
    gate.run("tokenizer", s(10), || checks::tokenizer(1000, 6));
    gate.run("ground truth oracle", s(60), || checks::ground_truth_oracle(8, 5));
    gate.run("end-to-end desk-scale run", s(300), end_to_end);
    two_layer_report();
    println!("{} criteria failed", gate.failures);
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
