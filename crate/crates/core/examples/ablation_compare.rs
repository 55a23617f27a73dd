//! Trains the five compared methods on a few phantoms and prints the
//! benchmark table. Short runs; the numbers show the harness, not the methods.
//!
//! cargo run --release --example ablation_compare -- [steps] [cases]

use mmtsn::cli::{compare_methods, format_compare_table, split_cases, MethodRow};
use mmtsn::infer::{evaluate_case, evaluate_cases};
use mmtsn::metrics::report::EvaluationReport;
use mmtsn::phantom::dataset::generate_cases;
use mmtsn::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let cases = generate_cases(11, [16, 16, 16], count)?;
    let (train_cases, eval_cases) = split_cases(&cases)?;
    let base = TrainConfig { steps, base_channels: 4, seed: 11, ..TrainConfig::default() };
    let out = tempfile::tempdir()?;

    let mut rows = Vec::new();
    for (method, config) in compare_methods(&base) {
        let trainer = train(&config, train_cases, &out.path().join(&method))?;
        let reports = evaluate_cases(eval_cases, 4, |c| evaluate_case(trainer.graph(), c, config.patch_extents))?;
        let m = EvaluationReport::new(reports).aggregate.mean;
        rows.push(MethodRow {
            method,
            metrics: [m.dice.et, m.dice.tc, m.dice.wt, m.hd95.et, m.hd95.tc, m.hd95.wt],
        });
    }
    let (text, _) = format_compare_table(&rows, &base, train_cases.len(), eval_cases.len());
    print!("{text}");
    Ok(())
}
