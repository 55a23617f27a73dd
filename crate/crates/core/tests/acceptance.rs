//! Acceptance criteria 1–8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{oracle_dice, oracle_hd95, random_mask, EXT};
use mmtsn::loss::spatial_constraint_loss;
use mmtsn::metrics::{dice_score, hd95};
use mmtsn::model::{scfb_traced, ModelConfig, ModelGraph, ScfbParams, Variant};
use mmtsn::phantom::dataset::generate_cases;
use mmtsn::phantom::voxel_count;
use mmtsn::phantom::MultiModalVolume;
use mmtsn::pipeline::{extract_patches, reassemble, PatchGrid, ProbVolume};
use mmtsn::tensor::{ConvParams, Tensor};
use mmtsn::train::{branch_fit, prepare_samples, TrainConfig, Trainer};
use mmtsn::verify::gradient_suite;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite_criterion() -> Outcome {
    let report = gradient_suite(0).map_err(|e| e.to_string())?;
    let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
    let detail = format!(
        "{} checks, {} failed {:?}, {:.1} s",
        report.checks.len(),
        failed.len(),
        failed,
        report.elapsed.as_secs_f64()
    );
    check(failed.is_empty() && report.elapsed < Duration::from_secs(60), detail)
}

fn scfb_identity_criterion() -> Outcome {
    let graph = ModelGraph::init(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let p = graph.scfb_params(0).map_err(|e| e.to_string())?;
    let zero = |c: &ConvParams| ConvParams::same(Tensor::zeros(c.kernel.shape()), Tensor::zeros(c.bias.shape())).unwrap();
    let params = ScfbParams {
        channel_reduce: zero(&p.channel_reduce),
        channel_expand: zero(&p.channel_expand),
        spatial: zero(&p.spatial),
        out: p.out.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut feature = || Tensor::new(&[8, 8, 8, 8], (0..4096).map(|_| rng.gen_range(-2.0f32..2.0)).collect()).unwrap();
    let (a, b, c, d) = (feature(), feature(), feature(), feature());
    let t = scfb_traced(&a, &b, &c, &d, &params).map_err(|e| e.to_string())?;
    let halves = t.channel_weights.data().iter().chain(t.spatial_weights.data()).all(|&w| w == 0.5);
    let sum: Vec<f32> = t.channel_attended.data().iter().zip(t.spatial_attended.data()).map(|(x, y)| x + y).collect();
    let exact = sum == t.concat.data();
    check(halves && exact, format!("W_c = W_s = 0.5: {halves}; F_c + F_s == F_concat bitwise: {exact}"))
}

fn sc_contract_criterion() -> Outcome {
    let t = |v: &[f32]| Tensor::new(&[1, 1, 1, v.len()], v.to_vec()).unwrap();
    let sc = |o: &[f32], i: &[f32]| spatial_constraint_loss(&t(o), &t(i)).unwrap().item().unwrap();
    let outer = [1.0, 1.0, 0.0, 0.0];
    let contained = sc(&outer, &[1.0, 1.0, 0.0, 0.0]);
    let half = sc(&outer, &[1.0, 1.0, 1.0, 1.0]);
    let before = sc(&outer, &[1.0, 0.5, 0.5, 0.0]);
    let after = sc(&outer, &[0.0, 0.5, 0.5, 1.0]);
    check(
        contained.abs() < 1e-4 && (half - 0.5).abs() < 1e-5 && after > before,
        format!("contained {contained:.2e}, half {half:.6}, move out {before:.4} -> {after:.4}"),
    )
}

fn metric_oracle_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut sentinels) = (0f64, 0);
    for pair in 0..200 {
        let (a, b) = (random_mask(&mut rng), random_mask(&mut rng));
        if dice_score(&a, &b).unwrap() != oracle_dice(&a, &b) {
            return Err(format!("dice differs on pair {pair}"));
        }
        match (hd95(&a, &b, EXT).unwrap(), oracle_hd95(&a, &b)) {
            (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
            (None, None) => sentinels += 1,
            other => return Err(format!("sentinel mismatch on pair {pair}: {other:?}")),
        }
    }
    check(
        worst <= 1e-9 && sentinels > 0,
        format!("200 pairs, dice exact, max hd95 diff {worst:.1e}, {sentinels} sentinel cases"),
    )
}

fn pipeline_criterion() -> Outcome {
    let mut worst = 0f32;
    for (ext, patch) in [([20, 18, 23], [8, 8, 8]), ([17, 16, 33], [16, 16, 16]), ([9, 5, 7], [4, 3, 5])] {
        let n = voxel_count(ext);
        let vol = MultiModalVolume::new(ext, (0..4 * n).map(|i| (i as f32 * 0.61).cos() * 7.0).collect(), 1.0).unwrap();
        let grid = PatchGrid::new(ext, patch).unwrap();
        let identity: Vec<ProbVolume> = extract_patches(&vol, None, &grid)
            .unwrap()
            .into_iter()
            .map(|p| ProbVolume::new(4, patch, p.image.into_data()).unwrap())
            .collect();
        let back = reassemble(&identity, &grid).unwrap();
        worst = back.data.iter().zip(vol.data()).map(|(a, b)| (a - b).abs()).fold(worst, f32::max);
    }
    let origins = PatchGrid::new([240, 240, 155], [64, 64, 48]).unwrap().len();
    check(worst <= 1e-6 && origins == 64, format!("max round-trip error {worst:.1e}, 240×240×155 / 64×64×48 -> {origins} origins"))
}

fn overfit_criterion() -> Outcome {
    let start = Instant::now();
    let cases = generate_cases(7, [16, 16, 16], 1).map_err(|e| e.to_string())?;
    let config = TrainConfig { variant: Variant::Mmtsn, depth: 3, base_channels: 8, steps: 300, seed: 7, augment: false, ..TrainConfig::default() };
    let samples = prepare_samples(&cases, config.patch_extents).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(config, samples).map_err(|e| e.to_string())?;
    trainer.run().map_err(|e| e.to_string())?;
    let fit = branch_fit(trainer.graph(), &trainer.samples()[0]).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let violation = fit.containment_wt_tc.max(fit.containment_tc_et);
    check(
        fit.wt_soft_dice >= 0.90 && violation <= 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "WT soft Dice {:.3} (need ≥ 0.90; TC {:.3}, ET {:.3}, main-head WT {:.3}), containment {:.3}/{:.3}, final loss {:.4}, {:.0} s",
            fit.wt_soft_dice,
            fit.tc_soft_dice,
            fit.et_soft_dice,
            fit.main_wt_soft_dice,
            fit.containment_wt_tc,
            fit.containment_tc_et,
            trainer.log().last().unwrap().total,
            elapsed.as_secs_f64()
        ),
    )
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmtsn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism_criterion() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("config.json");
    fs::write(&config, r#"{"depth": 2, "base_channels": 4, "steps": 4, "checkpoint_every": 2, "augment": true}"#).unwrap();
    let p = |q: &Path| q.to_str().unwrap().to_string();
    let mut trees = Vec::new();
    for rep in ["a", "b"] {
        let dir = root.path().join(rep);
        let data = dir.join("data");
        run(&["--seed", "9", "generate", "--extents", "16x16x24", "--count", "3", "--out-dir", &p(&data)])?;
        run(&["--seed", "9", "train", "--config", &p(&config), "--data-dir", &p(&data), "--out-dir", &p(&dir.join("run"))])?;
        let ck = p(&dir.join("run").join("checkpoint"));
        run(&["eval", "--checkpoint", &ck, "--data-dir", &p(&data), "--report", &p(&dir.join("report.json"))])?;
        let image = p(&data.join("case_9_0_image.vol"));
        run(&["infer", "--checkpoint", &ck, "--input", &image, "--output", &p(&dir.join("pred.vol"))])?;
        run(&["--seed", "9", "compare", "--config", &p(&config), "--data-dir", &p(&data), "--out-dir", &p(&dir.join("compare"))])?;
        trees.push(tree_bytes(&dir));
    }
    let files = trees[0].len();
    let differing: Vec<_> = trees[0].iter().zip(&trees[1]).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    check(
        trees[0].len() == trees[1].len() && differing.is_empty(),
        format!("generate/train/eval/infer/compare twice: {files} files, differing {differing:?}"),
    )
}

fn compare_criterion() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    let out_dir = root.path().join("compare");
    let config = root.path().join("config.json");
    fs::write(&config, r#"{"steps": 20, "seed": 3}"#).unwrap();
    let p = |q: &Path| q.to_str().unwrap().to_string();
    run(&["--seed", "3", "generate", "--extents", "16x16x16", "--count", "10", "--out-dir", &p(&data)])?;
    run(&["compare", "--config", &p(&config), "--data-dir", &p(&data), "--out-dir", &p(&out_dir)])?;
    let csv = fs::read_to_string(out_dir.join("compare.csv")).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(out_dir.join("compare.txt")).map_err(|e| e.to_string())?;
    println!("{text}");
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let methods: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    let shape_ok = rows.len() == 5 && rows.iter().all(|r| r.len() == 7);
    let all_trained = methods.iter().all(|m| out_dir.join(m).join("checkpoint").join("params.bin").exists());
    check(
        shape_ok && all_trained && text.starts_with("phantom benchmark"),
        format!("{} rows × {} metrics, methods {methods:?}", rows.len(), rows.first().map_or(0, |r| r.len() - 1)),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite_criterion),
        ("fusion block zero-init identity", scfb_identity_criterion),
        ("containment loss contract", sc_contract_criterion),
        ("metric oracle equivalence", metric_oracle_criterion),
        ("pipeline round trip", pipeline_criterion),
        ("overfit experiment", overfit_criterion),
        ("determinism", determinism_criterion),
        ("ablation harness", compare_criterion),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}. {name}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
