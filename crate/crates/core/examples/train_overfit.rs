//! Overfits MMTSN on one 16³ phantom and reports how well the WT/TC/ET
//! branches fit it.
//!
//! cargo run --release --example train_overfit -- [steps] [seed]

use std::time::Instant;

use mmtsn::phantom::dataset::generate_cases;
use mmtsn::train::{branch_fit, prepare_samples, TrainConfig, Trainer};

fn main() -> mmtsn::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let config = TrainConfig {
        steps,
        seed,
        augment: false,
        ..TrainConfig::default()
    };
    let cases = generate_cases(seed, [16, 16, 16], 1)?;
    let samples = prepare_samples(&cases, config.patch_extents)?;
    let mut trainer = Trainer::new(config, samples)?;
    let start = Instant::now();
    let mut done = 0;
    while done < steps {
        done = (done + 25).min(steps);
        trainer.run_until(done)?;
        let last = trainer.log().last().expect("at least one step");
        let fit = branch_fit(trainer.graph(), &trainer.samples()[0])?;
        println!(
            "step {done:4}  loss {:.4}  main wt {:.3}  wt {:.3}  tc {:.3}  et {:.3}  viol {:.3}/{:.3}  {:.0?}",
            last.total,
            fit.main_wt_soft_dice,
            fit.wt_soft_dice,
            fit.tc_soft_dice,
            fit.et_soft_dice,
            fit.containment_wt_tc,
            fit.containment_tc_et,
            start.elapsed()
        );
    }
    Ok(())
}
