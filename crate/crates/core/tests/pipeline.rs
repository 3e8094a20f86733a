use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use clothswap_core::gradcheck::{check_gradients, GradCheckProblem};
use clothswap_core::ingest::load_dataset;
use clothswap_core::losses::{LossConfig, MseMode};
use clothswap_core::model::Architecture;
use clothswap_core::synth::{generate_synthetic, SynthConfig};
use clothswap_core::trainer::run_experiment;
use clothswap_core::{
    AblationConfig, EmbeddingNet, Error, Image, LabelRecombinationTable, RngStream, RunConfig, Split,
};

fn synth(dir: &Path, ids: usize, outfits: usize, per: usize, test: Option<usize>, seed: u64) -> clothswap_core::Dataset {
    let cfg = SynthConfig {
        identities: ids,
        outfits,
        per_outfit: per,
        height: 16,
        width: 8,
        test_identities: test,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, &mut RngStream::new(seed), dir).unwrap()
}

#[test]
fn synth_minimal_and_cross_pairing() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(&tmp.path().join("a"), 2, 1, 1, Some(0), 1);
    assert_eq!(ds.len(), 2);

    let ds = synth(&tmp.path().join("b"), 2, 2, 2, Some(0), 1);
    assert_eq!(ds.len(), 8);
    for (id, idx) in ds.identity_index() {
        let clothes: BTreeSet<&str> = idx.iter().map(|&i| ds.records()[i].clothes_id.as_str()).collect();
        assert!(clothes.len() >= 2, "{id} has a single outfit");
    }
}

#[test]
fn synth_is_byte_identical_for_equal_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 6, 2, 3, None, 9);
    let b = synth(&tmp.path().join("b"), 6, 2, 3, None, 9);
    let read = |root: &Path, rel: &Path| fs::read(root.join(rel)).unwrap();
    assert_eq!(
        fs::read(a.root().join("manifest.csv")).unwrap(),
        fs::read(b.root().join("manifest.csv")).unwrap()
    );
    for r in a.records() {
        assert_eq!(read(a.root(), &r.image_path), read(b.root(), &r.image_path));
        assert_eq!(read(a.root(), &r.mask_path), read(b.root(), &r.mask_path));
    }
}

#[test]
fn manifest_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let src = synth(&tmp.path().join("d"), 2, 1, 2, Some(0), 3);
    let header = "image_path,mask_path,identity,camera,clothes_id,split\n";
    let path = src.root().join("m.csv");

    fs::write(&path, header).unwrap();
    let empty = load_dataset(&path, LabelRecombinationTable::default()).unwrap();
    assert!(empty.is_empty());

    let rows: Vec<String> = src
        .records()
        .iter()
        .take(3)
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.image_path.display(),
                r.mask_path.display(),
                r.identity,
                r.camera,
                r.clothes_id,
                r.split
            )
        })
        .collect();
    fs::write(&path, format!("{header}{}\n", rows.join("\n"))).unwrap();
    let three = load_dataset(&path, LabelRecombinationTable::default()).unwrap();
    assert_eq!(three.len(), 3);
    assert_eq!(three.identity_index().len(), 2);
    assert_eq!(three.indices_in(Split::Train).len(), 3);

    let bad = rows[0].rsplit_once(',').unwrap().0.to_string() + ",test";
    fs::write(&path, format!("{header}{bad}\n")).unwrap();
    match load_dataset(&path, LabelRecombinationTable::default()) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("test"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let root = RngStream::new(2024);
    for i in 0..5u64 {
        let mut rng = root.split_index("net", i);
        let arch = Architecture {
            in_channels: 3,
            input_height: 8,
            input_width: 8,
            widths: vec![2, 3],
            embed_dim: 3,
            num_classes: 2,
        };
        let net = EmbeddingNet::init(arch, &mut rng).unwrap();
        let inputs = (0..4)
            .map(|_| Image::new(3, 8, 8, (0..192).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let problem = GradCheckProblem {
            inputs,
            labels: vec![0, 1, 0, 1],
            pairs: Some(2),
            loss: LossConfig {
                margin: 0.3,
                mse_mode: if i % 2 == 0 { MseMode::L2Norm } else { MseMode::SquaredL2 },
            },
        };
        let report = check_gradients(&net, &problem, 1e-4).unwrap();
        assert!(report.checked > 0);
        assert!(report.passes(1e-3), "config {i}: {report:?}");
    }
}

fn tiny_run_config(steps: usize) -> RunConfig {
    let mut cfg = RunConfig::synthetic();
    for (k, v) in [
        ("pk.identities", "2"),
        ("pk.instances", "2"),
        ("geo.height", "16"),
        ("geo.width", "8"),
        ("geo.padding", "1"),
        ("model.widths", "4,8"),
        ("model.embed_dim", "8"),
        ("sgd.lr", "0.003"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.steps = steps;
    cfg
}

#[test]
fn training_replays_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(&tmp.path().join("d"), 6, 2, 3, Some(2), 4);
    let mut cfg = tiny_run_config(100);
    cfg.ablation = AblationConfig::PS_MSE_RE;
    run_experiment(&cfg, &ds, &tmp.path().join("r1")).unwrap();
    run_experiment(&cfg, &ds, &tmp.path().join("r2")).unwrap();
    for f in ["train_log.csv", "result.json", "checkpoint_final.bin"] {
        assert_eq!(
            fs::read(tmp.path().join("r1").join(f)).unwrap(),
            fs::read(tmp.path().join("r2").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn zero_steps_only_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(&tmp.path().join("d"), 6, 2, 3, Some(2), 4);
    let res = run_experiment(&tiny_run_config(0), &ds, &tmp.path().join("r")).unwrap();
    assert_eq!(res.final_loss, None);
    assert_eq!(res.results.len(), 2);
    let log = fs::read_to_string(tmp.path().join("r/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn loss_falls_on_two_separable_identities() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(&tmp.path().join("d"), 3, 1, 8, Some(1), 6);
    let mut cfg = tiny_run_config(50);
    cfg.ablation = AblationConfig::BASELINE;
    cfg.set("pk.instances", "4").unwrap();
    cfg.set("sgd.milestones", "").unwrap();
    run_experiment(&cfg, &ds, &tmp.path().join("r")).unwrap();
    let log = fs::read_to_string(tmp.path().join("r/train_log.csv")).unwrap();
    let totals: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 50);
    let window: Vec<f64> = totals.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in window.windows(2) {
        assert!(w[1] <= w[0], "moving average rose: {window:?}");
    }
}
