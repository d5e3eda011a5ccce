//! Scratch probe: distribution of the composed-pipeline gradient check
//! error across seeds, to separate activation-kink noise from systematic
//! error.

use camb_core::checks::run_standard_checks;

fn main() {
    for seed in 0u64..16 {
        let reports = run_standard_checks(seed).unwrap();
        let forward = reports.iter().find(|r| r.name == "model_forward").unwrap();
        let total = reports.iter().find(|r| r.name == "model_total_loss").unwrap();
        let camb = reports.iter().find(|r| r.name == "camb_forward").unwrap();
        println!(
            "seed {seed:>2}: camb {:.3e}  forward {:.3e}  total {:.3e} {}",
            camb.max_rel_err,
            forward.max_rel_err,
            total.max_rel_err,
            if total.passed() && forward.passed() && camb.passed() { "" } else { "<-- FAIL" }
        );
    }
}
