//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{episode_gradient_error, random_episode, random_model, reference_distances};
use trx::episodes::{generate_synthetic, Dataset, Episode, SyntheticSpec, VideoFeatures};
use trx::model::{ModelConfig, TrxModel};
use trx::tensor::Tape;
use trx::train_eval::{
    attention_analytics, evaluate, run_ablation, train, AblationKind, AblationPlan, EvalOptions, EvalReport, Outcome,
    TrainConfig,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

// Benchmark budget shared by the trained criteria.
const DATA_SEED: u64 = 1;
const TRAIN_SEED: u64 = 3;
const EVAL_EPISODES: usize = 1000;

fn benchmark() -> Dataset {
    generate_synthetic(&SyntheticSpec::default(), DATA_SEED).unwrap()
}

fn train_config(omegas: Vec<usize>, shot: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            omegas,
            ..ModelConfig::default()
        },
        shot,
        learning_rate: 0.3,
        accumulation: 4,
        episodes: 3000,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    }
}

fn eval_options(shot: usize, reversed: bool) -> EvalOptions {
    EvalOptions {
        shot,
        reversed,
        episodes: EVAL_EPISODES,
        timing: false,
        ..EvalOptions::default()
    }
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn tuple_counts() -> Verdict {
    let data = benchmark();
    let base = TrainConfig {
        episodes: 1,
        ..TrainConfig::default()
    };
    let eval = EvalOptions {
        episodes: 1,
        timing: false,
        ..EvalOptions::default()
    };
    let plan = AblationPlan::new(AblationKind::OmegaSweep, base, eval);
    let start = Instant::now();
    let rows = run_ablation::<f32>(&plan, &data, |_| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let counts: Vec<usize> = rows.iter().map(|r| r.tuple_count).collect();
    verdict(
        counts == [0, 28, 56, 70, 84, 98, 126, 154] && secs < 1.0,
        format!("counts {counts:?} in {secs:.2}s"),
    )
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut model = random_model(seed, vec![1, 2], 3, 4);
        let episode = random_episode(1000 + seed, 2, 2, 3, 4, 1);
        worst = worst.max(episode_gradient_error(&mut model, &episode, 1e-5));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 120.0,
        format!("worst relative error {worst:.2e} over 100 episodes in {secs:.1}s"),
    )
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let omegas = match seed % 5 {
            0 => vec![1],
            1 => vec![2],
            2 => vec![3],
            3 => vec![2, 3],
            _ => vec![1, 2, 4],
        };
        let model = random_model(seed, omegas, 4, 6);
        let episode = random_episode(2000 + seed, 3, 2, 4, 6, 2);
        let got = model.episode_distances(&episode).unwrap();
        let want = reference_distances(&model, &episode);
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.0.iter().zip(w) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-5 && secs < 60.0,
        format!("max abs difference {worst:.2e} over 50 instances in {secs:.2}s"),
    )
}

fn attention_error(model: &TrxModel<f64>, episode: &Episode) -> f64 {
    let mut tape = Tape::new();
    let queries: Vec<&VideoFeatures> = episode.queries.iter().map(|q| &q.video).collect();
    let pass = model.forward(&mut tape, &episode.support, &queries, false).unwrap();
    let mut worst: f64 = 0.0;
    for map in pass.attention.iter().flatten().flatten() {
        let a = tape.value(*map);
        for r in 0..a.rows() {
            worst = worst.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

fn attention_invariants() -> Verdict {
    let (mut sums, mut perm, mut dup): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let flat = |m: &TrxModel<f64>, e: &Episode| -> Vec<f64> {
        m.episode_distances(e).unwrap().into_iter().flat_map(|d| d.0).collect()
    };
    for seed in 0..50 {
        let model = random_model(seed, vec![1, 2, 3], 4, 6);
        let episode = random_episode(3000 + seed, 3, 3, 4, 6, 2);
        sums = sums.max(attention_error(&model, &episode));
        let base = flat(&model, &episode);

        let mut permuted = episode.clone();
        for (c, class) in permuted.support.iter_mut().enumerate() {
            class.rotate_left(1 + (seed as usize + c) % 2);
        }
        perm = perm.max(diff(&base, &flat(&model, &permuted)));

        let mut doubled = episode.clone();
        for class in &mut doubled.support {
            let copy = class.clone();
            class.extend(copy);
        }
        dup = dup.max(diff(&base, &flat(&model, &doubled)));
    }
    verdict(
        sums <= 1e-6 && perm <= 1e-6 && dup <= 1e-6,
        format!("row sum error {sums:.1e}, permutation {perm:.1e}, duplication {dup:.1e} over 50 episodes"),
    )
}

fn order_sensitivity(data: &Dataset) -> Verdict {
    let start = Instant::now();
    let plan = AblationPlan::new(
        AblationKind::ReverseOrder,
        train_config(vec![2], 5),
        eval_options(5, false),
    );
    let rows = run_ablation::<f32>(&plan, data, |_| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (fwd, rev) = (rows[0].accuracy, rows[1].accuracy);
    verdict(
        rows.len() == 2 && fwd >= 0.85 && pct(fwd - rev) >= 15.0 && secs <= 600.0,
        format!(
            "forward {:.1}%, reversed {:.1}%, drop {:.1} points in {secs:.0}s",
            pct(fwd),
            pct(rev),
            pct(fwd - rev)
        ),
    )
}

fn trained(data: &Dataset, omegas: Vec<usize>, shot: usize) -> (TrxModel<f32>, EvalReport, f64) {
    let start = Instant::now();
    let (model, _) = train::<f32>(&train_config(omegas, shot), data).unwrap();
    let report = evaluate(&model, data, &eval_options(shot, false)).unwrap();
    (model, report, start.elapsed().as_secs_f64())
}

fn tuple_vs_frame(frames: &EvalReport, tuples: &EvalReport, secs: f64) -> Verdict {
    let gap = pct(tuples.accuracy - frames.accuracy);
    verdict(
        gap >= 10.0 && secs <= 600.0,
        format!(
            "single frames {:.1}%, pairs+triples {:.1}%, gap {gap:.1} points in {secs:.0}s",
            pct(frames.accuracy),
            pct(tuples.accuracy)
        ),
    )
}

fn shot_scaling(one: &EvalReport, five: &EvalReport) -> Verdict {
    let gap = pct(five.accuracy - one.accuracy);
    verdict(
        gap >= 5.0,
        format!(
            "1-shot {:.1}%, 5-shot {:.1}%, gap {gap:.1} points",
            pct(one.accuracy),
            pct(five.accuracy)
        ),
    )
}

fn retention(data: &Dataset) -> Verdict {
    let start = Instant::now();
    let mut plan = AblationPlan::new(
        AblationKind::RetentionSweep,
        train_config(vec![2, 3], 5),
        eval_options(5, false),
    );
    plan.fractions = vec![0.2, 1.0];
    plan.runs = 4;
    let rows = run_ablation::<f32>(&plan, data, |_| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mean = |f: f64| {
        let accs: Vec<f64> = rows.iter().filter(|r| r.fraction == f).map(|r| r.accuracy).collect();
        (accs.iter().sum::<f64>() / accs.len() as f64, accs.len())
    };
    let ((low, n_low), (full, n_full)) = (mean(0.2), mean(1.0));
    verdict(
        n_low == 4 && n_full == 4 && pct(full) >= pct(low) - 2.0 && secs <= 1800.0,
        format!(
            "20% retention {:.1}%, 100% retention {:.1}% (4 runs each) in {secs:.0}s",
            pct(low),
            pct(full)
        ),
    )
}

fn analytics(data: &Dataset, five: &TrxModel<f32>, one: &TrxModel<f32>) -> Verdict {
    let mut problems = Vec::new();
    let stats5 = attention_analytics(five, data, &eval_options(5, false)).unwrap();
    let stats1 = attention_analytics(one, data, &eval_options(1, false)).unwrap();
    for (name, stats) in [("5-shot", &stats5), ("1-shot", &stats1)] {
        for outcome in Outcome::ALL {
            let p = stats.percentages(outcome);
            let total: f64 = p.iter().sum();
            if total != 0.0 && (total - 100.0).abs() > 0.01 {
                problems.push(format!("{name} {} sums to {total}", outcome.as_str()));
            }
            if name == "1-shot" && total != 0.0 && (p[0] - 100.0).abs() > 1e-9 {
                problems.push(format!("1-shot {} bucket 1 holds {}%", outcome.as_str(), p[0]));
            }
        }
        for h in &stats.heatmaps {
            let n = h.tuples.len();
            for row in h.normalized().chunks(n) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    problems.push(format!("{name} heatmap omega {} row sums to {s}", h.omega));
                }
            }
        }
    }
    let multi = stats5.multi_video_fraction();
    if multi <= 0.0 {
        problems.push("5-shot maximal matches never span two videos".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "histograms and heatmap rows normalised; 5-shot multi-video share {:.1}%",
            pct(multi)
        )
    } else {
        problems.join("; ")
    };
    verdict(problems.is_empty(), detail)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trx"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (a, b, c) = (path("a"), path("b"), path("c"));
    let args = |out: &str| {
        vec![
            "ablate".to_string(),
            "--kind".into(),
            "pe_toggle".into(),
            "--precision".into(),
            "f64".into(),
            "--train-episodes".into(),
            "30".into(),
            "--accumulation".into(),
            "4".into(),
            "--lr".into(),
            "0.1".into(),
            "--eval-episodes".into(),
            "50".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    let mut runs = Vec::new();
    for out in [&a, &b] {
        let argv = args(&s(out));
        runs.push(run_cli(&argv.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    let manifest = s(&a.join("manifest.txt"));
    runs.push(run_cli(&["ablate", "--config", &manifest, "--out", &s(&c)]));
    if let Some(Err(e)) = runs.into_iter().find(Result::is_err) {
        return verdict(false, format!("run failed: {}", e.trim()));
    }
    let read = |d: &Path| fs::read(d.join("metrics.jsonl")).unwrap_or_default();
    let (ma, mb, mc) = (read(&a), read(&b), read(&c));
    verdict(
        !ma.is_empty() && ma == mb && ma == mc,
        format!(
            "{} metric lines; repeat identical: {}; rerun from manifest identical: {}",
            String::from_utf8_lossy(&ma).lines().count(),
            ma == mb,
            ma == mc
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!(
            "[{}] {n:>2} {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };

    report(1, "tuple counts", tuple_counts());
    report(2, "gradient suite", gradient_suite());
    report(3, "oracle equivalence", oracle_equivalence());
    report(4, "attention invariants", attention_invariants());

    let data = benchmark();
    report(5, "order sensitivity", order_sensitivity(&data));

    let (_, frames, t1) = trained(&data, vec![1], 5);
    let (five_model, five, t23) = trained(&data, vec![2, 3], 5);
    report(6, "tuples over frames", tuple_vs_frame(&frames, &five, t1 + t23));

    let (one_model, one, _) = trained(&data, vec![2, 3], 1);
    report(7, "shot scaling", shot_scaling(&one, &five));
    report(8, "retention sweep", retention(&data));
    report(9, "analytics integrity", analytics(&data, &five_model, &one_model));
    report(10, "determinism", determinism());

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0.to_string())
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
