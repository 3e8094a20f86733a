//! Acceptance runner: one PASS/FAIL line per criterion and a closing summary.
//! `CLOTHSWAP_ACCEPTANCE=1,3` restricts the run to a subset;
//! `CLOTHSWAP_ACCEPTANCE_STRICT=1` turns any failure into a non-zero exit.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clothswap_core::augment::{random_erase_rect, FillMode, RandomErasingConfig};
use clothswap_core::eval::{average_precision, evaluate, Protocol};
use clothswap_core::gradcheck::{check_gradients, GradCheckProblem};
use clothswap_core::losses::{batch_hard_triplet, LossConfig, MseMode};
use clothswap_core::model::Architecture;
use clothswap_core::sampling::{generate, BankOrder};
use clothswap_core::synth::{generate_synthetic, SynthConfig};
use clothswap_core::trainer::{run_ablation, ExperimentResult, ABLATION_ROWS};
use clothswap_core::{
    part, AblationConfig, EmbeddingNet, Image, Matrix, ProtocolMode, RngStream, RunConfig, SamplingConfig,
};
use common::{class_multiset, metric_oracle, random_batch, random_protocol, triplet_oracle};

/// Seed of the standard synthetic dataset used by the trend and replay checks.
const DATASET_SEED: u64 = 7;
const TREND_SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn random_sampling_config(rng: &mut RngStream) -> SamplingConfig {
    let upper = rng.bernoulli(0.5);
    SamplingConfig {
        swap_upper: upper,
        swap_pants: !upper || rng.bernoulli(0.5),
        independent_permutations: rng.bernoulli(0.5),
        bank_order: if rng.bernoulli(0.5) { BankOrder::Shuffled } else { BankOrder::Raster },
    }
}

fn conservation() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(101);
    for case in 0..200 {
        let b = 1 + rng.below(8);
        let (h, w) = (2 + rng.below(15), 2 + rng.below(9));
        let batch = random_batch(&mut rng, b, h, w);
        let cfg = random_sampling_config(&mut rng);
        let out = match generate(&batch, &cfg, &mut rng) {
            Ok(o) => o,
            Err(e) => return Outcome::new(false, format!("case {case}: {e}")),
        };
        if out.masks() != batch.masks() || out.identities() != batch.identities() {
            return Outcome::new(false, format!("case {case}: masks or identities changed"));
        }
        for class in [part::UPPER_CLOTHES, part::PANTS] {
            if class_multiset(&out, class) != class_multiset(&batch, class) {
                return Outcome::new(false, format!("case {case}: class {class} multiset changed"));
            }
        }
        for (k, m) in batch.masks().iter().enumerate() {
            for r in 0..h {
                for c in 0..w {
                    let l = m.get(r, c);
                    let swapped = (l == part::UPPER_CLOTHES && cfg.swap_upper) || (l == part::PANTS && cfg.swap_pants);
                    if swapped {
                        continue;
                    }
                    for ch in 0..3 {
                        if out.images()[k].get(ch, r, c).to_bits() != batch.images()[k].get(ch, r, c).to_bits() {
                            return Outcome::new(false, format!("case {case}: pixel ({k},{r},{c}) changed"));
                        }
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    Outcome::new(t < Duration::from_secs(10), format!("200 batches in {:.2}s (limit 10s)", t.as_secs_f64()))
}

fn single_sample_fixed_point() -> Outcome {
    let mut rng = RngStream::new(202);
    for case in 0..100 {
        let (h, w) = (1 + rng.below(16), 1 + rng.below(16));
        let batch = random_batch(&mut rng, 1, h, w);
        let mut cfg = random_sampling_config(&mut rng);
        cfg.bank_order = BankOrder::Raster;
        match generate(&batch, &cfg, &mut rng) {
            Ok(out) if out == batch => {}
            Ok(_) => return Outcome::new(false, format!("case {case}: output differs")),
            Err(e) => return Outcome::new(false, format!("case {case}: {e}")),
        }
    }
    Outcome::new(true, "100 single-sample batches unchanged")
}

fn triplet_oracle_equivalence() -> Outcome {
    let mut rng = RngStream::new(303);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = 2 * (2 + rng.below(7));
        let d = 1 + rng.below(4);
        let f = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
        let ids = 2 + rng.below(n / 2 - 1);
        let mut labels: Vec<usize> = (0..n).map(|i| (i / 2) % ids).collect();
        rng.shuffle(&mut labels);
        let got = batch_hard_triplet(&f, &labels, 0.3).unwrap().value;
        worst = worst.max((got - triplet_oracle(&f, &labels, 0.3)).abs());
    }
    let same = Matrix::from_vec(8, 3, vec![0.25; 24]).unwrap();
    let collapsed = batch_hard_triplet(&same, &[0, 0, 1, 1, 2, 2, 3, 3], 0.3).unwrap().value;
    Outcome::new(
        worst < 1e-9 && collapsed == 0.3,
        format!("max |diff| {worst:.2e} over 500 batches (limit 1e-9); identical embeddings -> {collapsed}"),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let root = RngStream::new(404);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..6u64 {
        let mut rng = root.split_index("config", i);
        let arch = Architecture {
            in_channels: 3,
            input_height: 8,
            input_width: 8,
            widths: vec![1 + rng.below(3), 1 + rng.below(3)],
            embed_dim: 2 + rng.below(3),
            num_classes: 2 + rng.below(2),
        };
        let classes = arch.num_classes;
        let net = EmbeddingNet::init(arch, &mut rng).unwrap();
        let b = 2;
        let inputs = (0..2 * b)
            .map(|_| Image::new(3, 8, 8, (0..192).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let problem = GradCheckProblem {
            inputs,
            labels: vec![0, 1, 0, 1].into_iter().map(|l| l % classes).collect(),
            pairs: Some(b),
            loss: LossConfig {
                margin: 0.3,
                mse_mode: if i % 2 == 0 { MseMode::L2Norm } else { MseMode::SquaredL2 },
            },
        };
        let report = match check_gradients(&net, &problem, 1e-4) {
            Ok(r) => r,
            Err(e) => return Outcome::new(false, format!("config {i}: {e}")),
        };
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        skipped += report.skipped;
    }
    let t = start.elapsed();
    Outcome::new(
        worst < 1e-3 && checked > 0 && t < Duration::from_secs(60),
        format!(
            "6 configs, {checked} coordinates checked, {skipped} skipped at singularities, max rel error {worst:.2e} (limit 1e-3), {:.1}s (limit 60s)",
            t.as_secs_f64()
        ),
    )
}

fn metric_oracle_equivalence() -> Outcome {
    let mut rng = RngStream::new(505);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (f, ids, query, gallery) = random_protocol(&mut rng);
        let p = Protocol {
            mode: ProtocolMode::CrossClothes,
            query: query.clone(),
            gallery: gallery.clone(),
        };
        let got = evaluate(&f, &ids, &p).unwrap();
        let want = metric_oracle(&f, &ids, &query, &gallery);
        worst = worst.max((got.map - want.map).abs());
        for (a, b) in got.cmc.iter().zip(&want.cmc) {
            worst = worst.max((a - b).abs());
        }
    }
    let ap = average_precision(&[true, false, true, false, false]);
    Outcome::new(
        worst <= 1e-12 && (ap - 0.833333).abs() < 5e-7,
        format!("max |diff| {worst:.2e} over 200 protocols (limit 1e-12); AP(ranks 1,3 of 5) = {ap:.6}"),
    )
}

fn standard_dataset(dir: &Path) -> clothswap_core::Dataset {
    generate_synthetic(&SynthConfig::default(), &mut RngStream::new(DATASET_SEED), dir).expect("standard dataset")
}

fn rank1(res: &ExperimentResult, mode: ProtocolMode) -> f64 {
    res.results.iter().find(|r| r.mode == mode).map_or(f64::NAN, |r| 100.0 * r.rank1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_trend() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let ds = standard_dataset(&tmp.path().join("data"));
    let base = RunConfig::synthetic();
    if base.steps > 2000 {
        return Outcome::new(false, format!("shipped config trains {} steps (limit 2000)", base.steps));
    }
    let mut cross: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut same: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seed in TREND_SEEDS {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let results = match run_ablation(&cfg, &ABLATION_ROWS, &ds, &tmp.path().join(format!("seed{seed}"))) {
            Ok(r) => r,
            Err(e) => return Outcome::new(false, format!("seed {seed}: {e}")),
        };
        for r in &results {
            cross.entry(r.row.clone()).or_default().push(rank1(r, ProtocolMode::CrossClothes));
            same.entry(r.row.clone()).or_default().push(rank1(r, ProtocolMode::SameClothes));
        }
    }
    let med = |m: &BTreeMap<String, Vec<f64>>, row: AblationConfig| median(m[&row.row_name()].clone());
    let (b, ps, psm) = (
        med(&cross, AblationConfig::BASELINE),
        med(&cross, AblationConfig::PS),
        med(&cross, AblationConfig::PS_MSE),
    );
    let same_meds: Vec<f64> = ABLATION_ROWS.iter().map(|&r| med(&same, r)).collect();
    let same_range = same_meds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - same_meds.iter().cloned().fold(f64::INFINITY, f64::min);
    let t = start.elapsed();
    let rows: Vec<String> = ABLATION_ROWS
        .iter()
        .map(|&r| format!("{} cross {:?} same {:?}", r.row_name(), cross[&r.row_name()], same[&r.row_name()]))
        .collect();
    println!("    per-seed Rank-1 (seeds {TREND_SEEDS:?}, {} steps):", base.steps);
    for row in &rows {
        println!("      {row}");
    }
    let pass = psm >= ps && ps >= b && psm - b >= 10.0 && same_range <= 5.0 && t < Duration::from_secs(1800);
    Outcome::new(
        pass,
        format!(
            "median cross R1: baseline {b:.2}, +ps {ps:.2}, +ps+mse {psm:.2} (gain {:.2}, need >= 10); same-clothes spread {same_range:.2} (limit 5); {:.0}s (target 1800s)",
            psm - b,
            t.as_secs_f64()
        ),
    )
}

fn json_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism_replay() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let ds = standard_dataset(&tmp.path().join("data"));
    let mut cfg = RunConfig::synthetic();
    cfg.seed = TREND_SEEDS[0];
    for run in ["a", "b"] {
        if let Err(e) = run_ablation(&cfg, &ABLATION_ROWS, &ds, &tmp.path().join(run)) {
            return Outcome::new(false, format!("run {run}: {e}"));
        }
    }
    let a = json_files(&tmp.path().join("a"));
    let b = json_files(&tmp.path().join("b"));
    let row_files = ABLATION_ROWS
        .iter()
        .filter(|r| a.contains_key(&format!("{}.json", r.row_name())))
        .count();
    Outcome::new(
        a == b && row_files == ABLATION_ROWS.len(),
        format!("{} JSON files compared byte for byte, {row_files} row results", a.len()),
    )
}

fn erasing_distribution() -> Outcome {
    let mut rng = RngStream::new(808);
    let (h, w) = (128, 64);
    let img = Image::new(3, h, w, (0..3 * h * w).map(|_| rng.uniform()).collect()).unwrap();
    let cfg = RandomErasingConfig {
        probability: 1.0,
        fill: FillMode::Random,
        ..RandomErasingConfig::default()
    };
    let (mut amin, mut amax, mut rmin, mut rmax) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for k in 0..1000 {
        let (out, rect) = random_erase_rect(&img, &cfg, &mut rng);
        let changed: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| (0..3).any(|ch| out.get(ch, r, c).to_bits() != img.get(ch, r, c).to_bits()))
            .collect();
        if changed.is_empty() {
            return Outcome::new(false, format!("application {k} erased nothing (rect {rect:?})"));
        }
        let (r0, r1) = changed.iter().fold((h, 0), |(a, b), &(r, _)| (a.min(r), b.max(r)));
        let (c0, c1) = changed.iter().fold((w, 0), |(a, b), &(_, c)| (a.min(c), b.max(c)));
        let (eh, ew) = (r1 - r0 + 1, c1 - c0 + 1);
        if eh * ew != changed.len() {
            return Outcome::new(false, format!("application {k}: erased region is not a rectangle"));
        }
        let area = (eh * ew) as f64 / (h * w) as f64;
        let aspect = eh as f64 / ew as f64;
        amin = amin.min(area);
        amax = amax.max(area);
        rmin = rmin.min(aspect);
        rmax = rmax.max(aspect);
    }
    let in_range = amin >= 0.02 && amax <= 0.4 && rmin >= 0.3 && rmax <= 3.33;

    let mut identical = true;
    let mut misses = 0;
    let half = RandomErasingConfig {
        probability: 0.5,
        ..RandomErasingConfig::default()
    };
    for _ in 0..200 {
        let (out, rect) = random_erase_rect(&img, &half, &mut rng);
        if rect.is_none() {
            misses += 1;
            identical &= out == img;
        }
    }
    let never = RandomErasingConfig {
        probability: 0.0,
        ..RandomErasingConfig::default()
    };
    identical &= random_erase_rect(&img, &never, &mut rng).0 == img;
    Outcome::new(
        in_range && identical && misses > 0,
        format!(
            "area ratio [{amin:.4}, {amax:.4}], aspect [{rmin:.3}, {rmax:.3}] over 1000; {misses} failed draws bit-identical: {identical}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "pixel-sampling conservation", conservation),
        (2, "single-sample fixed point", single_sample_fixed_point),
        (3, "triplet oracle equivalence", triplet_oracle_equivalence),
        (4, "network gradient checks", gradient_checks),
        (5, "metric oracle equivalence", metric_oracle_equivalence),
        (6, "ablation trend", ablation_trend),
        (7, "ablation determinism replay", determinism_replay),
        (8, "random-erasing distribution", erasing_distribution),
    ];
    let only: Option<Vec<usize>> = std::env::var("CLOTHSWAP_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id} ({name}): {} [{:.1}s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: FAILED criteria {failed:?}");
    let strict = std::env::var("CLOTHSWAP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
