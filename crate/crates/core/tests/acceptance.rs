use std::io::Write;

use nsgame::harness::{run_experiment_suite, SuiteConfig};

#[test]
fn acceptance_criteria() {
    let report = run_experiment_suite(&SuiteConfig::default());
    assert_eq!(report.criteria.len(), 9);
    let mut out = std::io::stdout().lock();
    for c in &report.criteria {
        writeln!(
            out,
            "criterion {}: {} {} (cases {}, failures {}, worst margin {:.3e})",
            c.id,
            if c.pass { "PASS" } else { "FAIL" },
            c.title,
            c.cases,
            c.failures,
            c.worst_margin
        )
        .unwrap();
        for note in &c.notes {
            writeln!(out, "    {note}").unwrap();
        }
    }
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
