//! Training loop, evaluation cadence and the ablation matrix.
//!
//! One step: PK batch, joint geometric augmentation, optional pixel
//! sampling (one generated twin per sample), optional random erasing on
//! every input, a forward pass over all inputs, the loss stack and one SGD
//! update. All randomness is derived from the run seed, so a run is a pure
//! function of `(RunConfig, dataset)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::augment::{apply_geo, geo_augment, pk_batches, random_erase, resize_bilinear, GeoTransform};
use crate::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{build_protocol, evaluate, EvalResult, ProtocolMode};
use crate::ingest::{Dataset, Split};
use crate::losses::{evaluate_losses, LossReport};
use crate::model::{save_checkpoint, Architecture, EmbeddingNet, TrainState};
use crate::rng::RngStream;
use crate::sampling::generate;
use crate::tensor::{Batch, Image, Matrix, SemanticMask};

/// Decoded samples of a dataset, keyed by record index.
#[derive(Debug, Clone)]
pub struct SampleStore {
    samples: BTreeMap<usize, (Image, SemanticMask)>,
    class_of: BTreeMap<String, usize>,
}

impl SampleStore {
    /// Decodes every record in the given splits.
    pub fn load(dataset: &Dataset, splits: &[Split]) -> Result<Self> {
        let mut samples = BTreeMap::new();
        for (i, r) in dataset.records().iter().enumerate() {
            if splits.contains(&r.split) {
                samples.insert(i, dataset.load_sample(i)?);
            }
        }
        let class_of = dataset
            .train_identities()
            .into_iter()
            .enumerate()
            .map(|(c, id)| (id, c))
            .collect();
        Ok(Self { samples, class_of })
    }

    pub fn load_all(dataset: &Dataset) -> Result<Self> {
        Self::load(dataset, &[Split::Train, Split::Gallery, Split::QuerySame, Split::QueryCross])
    }

    pub fn get(&self, index: usize) -> Result<&(Image, SemanticMask)> {
        self.samples
            .get(&index)
            .ok_or_else(|| Error::Data(format!("record {index} was not loaded")))
    }

    pub fn num_classes(&self) -> usize {
        self.class_of.len()
    }

    pub fn class_of(&self, identity: &str) -> Option<usize> {
        self.class_of.get(identity).copied()
    }
}

pub fn architecture_for(cfg: &RunConfig, num_classes: usize) -> Architecture {
    Architecture {
        in_channels: 3,
        input_height: cfg.geo.height,
        input_width: cfg.geo.width,
        widths: cfg.model.widths.clone(),
        embed_dim: cfg.model.embed_dim,
        num_classes,
    }
}

/// Builds the augmented (initial) batch for a list of record indices.
pub fn prepare_batch(
    dataset: &Dataset,
    store: &SampleStore,
    indices: &[usize],
    cfg: &RunConfig,
    rng: &mut RngStream,
) -> Result<Batch> {
    let mut images = Vec::with_capacity(indices.len());
    let mut masks = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let (img, mask) = store.get(i)?;
        let (img, mask) = geo_augment(img, mask, &cfg.geo, rng);
        let identity = &dataset.records()[i].identity;
        let class = store
            .class_of(identity)
            .ok_or_else(|| Error::Data(format!("identity {identity} is not a training identity")))?;
        images.push(img);
        masks.push(mask);
        labels.push(class);
    }
    Batch::new(images, masks, labels)
}

/// One optimizer step on an already augmented batch.
pub fn train_step(state: &mut TrainState, batch: &Batch, cfg: &RunConfig, rng: &mut RngStream) -> Result<LossReport> {
    let ab = cfg.ablation;
    let b = batch.len();
    let mut inputs: Vec<Image> = batch.images().to_vec();
    let mut labels: Vec<usize> = batch.identities().to_vec();
    if ab.pixel_sampling {
        let generated = generate(batch, &cfg.sampling, rng)?;
        inputs.extend_from_slice(generated.images());
        labels.extend_from_slice(generated.identities());
    }
    if ab.random_erasing {
        for img in inputs.iter_mut() {
            *img = random_erase(img, &cfg.erasing, rng);
        }
    }
    let out = state.net.forward(&inputs)?;
    let pairs = (ab.pixel_sampling && ab.mse).then_some(b);
    let losses = evaluate_losses(&out.embeddings, &out.logits, &labels, pairs, &cfg.loss)?;
    if !losses.report.total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {} at step {}",
            losses.report.total,
            state.step()
        )));
    }
    let grads = state
        .net
        .backward(&out, &losses.d_embeddings, &losses.d_logits, &state.frozen)?;
    state.sgd_step(&grads)?;
    Ok(losses.report)
}

/// Embeds records without augmentation (resize only), in index order.
/// Rows of the result line up with dataset record indices; records not in
/// `indices` get zero rows.
pub fn embed_records(net: &EmbeddingNet, store: &SampleStore, indices: &[usize], total: usize) -> Result<Matrix> {
    let a = net.architecture();
    let mut out = Matrix::zeros(total, a.embed_dim);
    for chunk in indices.chunks(64) {
        let imgs = chunk
            .iter()
            .map(|&i| store.get(i).map(|(img, _)| resize_bilinear(img, a.input_height, a.input_width)))
            .collect::<Result<Vec<_>>>()?;
        let fwd = net.forward(&imgs)?;
        for (k, &i) in chunk.iter().enumerate() {
            out.row_mut(i).copy_from_slice(fwd.embeddings.row(k));
        }
    }
    Ok(out)
}

/// Runs both protocols that the dataset supports.
pub fn evaluate_net(net: &EmbeddingNet, dataset: &Dataset, store: &SampleStore) -> Result<Vec<EvalResult>> {
    let mut protocols = Vec::new();
    for mode in ProtocolMode::ALL {
        match build_protocol(dataset, mode) {
            Ok(p) => protocols.push(p),
            // A mode with no queries is skipped; real violations surface.
            Err(Error::Protocol(m)) if m.contains("evaluation undefined") => continue,
            Err(e) => return Err(e),
        }
    }
    let mut needed: Vec<usize> = protocols.iter().flat_map(|p| p.query.iter().chain(&p.gallery).copied()).collect();
    needed.sort_unstable();
    needed.dedup();
    let emb = embed_records(net, store, &needed, dataset.len())?;
    let ids: Vec<&str> = dataset.records().iter().map(|r| r.identity.as_str()).collect();
    protocols.iter().map(|p| evaluate(&emb, &ids, p)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub row: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub results: Vec<EvalResult>,
}

impl ExperimentResult {
    pub fn result(&self, mode: ProtocolMode) -> Option<&EvalResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

pub const TRAIN_LOG_HEADER: &str = "step,lr,mse,ce,triplet,total";

pub fn format_log_row(step: usize, lr: f64, r: &LossReport) -> String {
    let mse = r.mse.map(|v| v.to_string()).unwrap_or_default();
    format!("{step},{lr},{mse},{},{},{}", r.ce, r.triplet, r.total)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains from scratch and writes `config.txt`, `train_log.csv`,
/// `eval_log.csv`, checkpoints and `result.json` / `eval_<mode>.json`
/// under `out_dir`.
pub fn run_experiment(cfg: &RunConfig, dataset: &Dataset, out_dir: &Path) -> Result<ExperimentResult> {
    let store = SampleStore::load_all(dataset)?;
    run_with_store(cfg, dataset, &store, out_dir)
}

pub fn run_with_store(cfg: &RunConfig, dataset: &Dataset, store: &SampleStore, out_dir: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("config.txt"), &cfg.to_kv_string())?;

    let root = RngStream::new(cfg.seed);
    let arch = architecture_for(cfg, store.num_classes().max(1));
    let net = EmbeddingNet::init(arch, &mut root.split("init"))?;
    let mut sgd = cfg.sgd.clone();
    sgd.total_steps = cfg.steps;
    let mut state = TrainState::new(net, sgd)?;

    let mut log = String::from(TRAIN_LOG_HEADER);
    log.push('\n');
    let mut eval_log = String::from("step,mode,rank1,rank5,rank10,mAP\n");
    let mut final_loss = None;
    if cfg.steps > 0 {
        let mut sampler = pk_batches(dataset, cfg.pk, root.split("pk"))?;
        for step in 0..cfg.steps {
            let indices = sampler.next_batch();
            let mut rng = root.split_index("step", step as u64);
            let batch = prepare_batch(dataset, store, &indices, cfg, &mut rng)?;
            let lr = state.lr();
            let report = train_step(&mut state, &batch, cfg, &mut rng)?;
            log.push_str(&format_log_row(step, lr, &report));
            log.push('\n');
            final_loss = Some(report.total);

            let done = step + 1;
            if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.steps {
                for r in evaluate_net(&state.net, dataset, store)? {
                    let _ = writeln!(eval_log, "{done},{},{},{},{},{}", r.mode, r.rank1, r.rank5, r.rank10, r.map);
                }
            }
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                save_checkpoint(&state.net, &out_dir.join(format!("checkpoint_{done:06}.bin")))?;
            }
        }
    }
    write_file(&out_dir.join("train_log.csv"), &log)?;
    save_checkpoint(&state.net, &out_dir.join("checkpoint_final.bin"))?;

    let results = evaluate_net(&state.net, dataset, store)?;
    for r in &results {
        let _ = writeln!(eval_log, "{},{},{},{},{},{}", cfg.steps, r.mode, r.rank1, r.rank5, r.rank10, r.map);
        write_file(&out_dir.join(format!("eval_{}.json", r.mode)), &r.to_json())?;
    }
    write_file(&out_dir.join("eval_log.csv"), &eval_log)?;
    let result = ExperimentResult {
        row: cfg.ablation.row_name(),
        seed: cfg.seed,
        steps: cfg.steps,
        final_loss,
        results,
    };
    write_file(&out_dir.join("result.json"), &result.to_json())?;
    Ok(result)
}

/// The ablation rows, in table order.
pub const ABLATION_ROWS: [AblationConfig; 4] = [
    AblationConfig::BASELINE,
    AblationConfig::PS,
    AblationConfig::PS_MSE,
    AblationConfig::PS_MSE_RE,
];

/// Runs every row of `rows` with the same seed; each row gets its own
/// subdirectory and a `<row>.json` summary in `out_dir`.
pub fn run_ablation(
    base: &RunConfig,
    rows: &[AblationConfig],
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<Vec<ExperimentResult>> {
    let store = SampleStore::load_all(dataset)?;
    let mut out = Vec::with_capacity(rows.len());
    for &ablation in rows {
        let cfg = RunConfig {
            ablation,
            ..base.clone()
        };
        let dir: PathBuf = out_dir.join(ablation.row_name());
        let res = run_with_store(&cfg, dataset, &store, &dir)?;
        write_file(&out_dir.join(format!("{}.json", ablation.row_name())), &res.to_json())?;
        out.push(res);
    }
    Ok(out)
}

/// Frozen tensors by name, for partial fine-tuning.
pub fn freeze(state: &mut TrainState, names: impl IntoIterator<Item = String>) {
    state.frozen.extend(names);
}

/// Applies the deterministic centre crop (no flip), used for previews.
pub fn center_view(img: &Image, mask: &SemanticMask, cfg: &RunConfig) -> (Image, SemanticMask) {
    apply_geo(img, mask, &cfg.geo, GeoTransform::centered(&cfg.geo))
}
