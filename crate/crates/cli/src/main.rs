use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clothswap_core::eval::{build_protocol, evaluate, format_table};
use clothswap_core::gradcheck::{check_gradients, GradCheckProblem};
use clothswap_core::ingest::{load_dataset, write_rgb_png};
use clothswap_core::losses::{LossConfig, MseMode};
use clothswap_core::model::{load_checkpoint, Architecture, EmbeddingNet};
use clothswap_core::synth::{generate_synthetic, SynthConfig};
use clothswap_core::trainer::{embed_records, prepare_batch, run_ablation, run_experiment, SampleStore, ABLATION_ROWS};
use clothswap_core::{
    sampling, Batch, Dataset, Error, Image, LabelRecombinationTable, ProtocolMode, RngStream, RunConfig,
    SemanticMask,
};

mod exit;

use exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "clothswap", version, about = "Cloth-changing re-ID with semantic-guided pixel sampling")]
struct Cli {
    /// Root directory that relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the procedural pedestrian dataset.
    GenSynth(GenSynthArgs),
    /// Dump original / mask / generated triptychs of one pixel-sampled batch.
    PreviewAug(PreviewArgs),
    /// Train one configuration and evaluate it.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the cross- and same-clothes protocols.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    CheckGrad(CheckGradArgs),
    /// Run the ablation rows (baseline, +ps, +ps+mse, +ps+mse+re).
    Ablate(TrainArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    ids: usize,
    #[arg(long, default_value_t = 3)]
    outfits: usize,
    #[arg(long = "per-outfit", default_value_t = 6)]
    per_outfit: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Per-channel range of outfit colours around mid-grey, in [0, 1].
    #[arg(long = "clothes-spread", default_value_t = 0.5)]
    clothes_spread: f64,
    /// Held-out identities (default: a third of --ids).
    #[arg(long = "test-ids")]
    test_ids: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory containing manifest.csv, or the manifest itself.
    #[arg(long)]
    data: PathBuf,
    /// Recombination table (`raw = part` lines); defaults to the shipped table.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` config file applied over the shipped defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override, `key=value`; may repeat. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value = "preview")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// cross, same or both.
    #[arg(long, default_value = "both")]
    mode: String,
    /// Directory for eval_<mode>.json files; JSON goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random tiny configurations.
    #[arg(long, default_value_t = 5)]
    configs: usize,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

struct Ctx {
    workdir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn dataset(&self, args: &DataArgs) -> Result<Dataset, CliError> {
        let table = match &args.table {
            Some(t) => LabelRecombinationTable::from_file(&self.path(t))?,
            None => LabelRecombinationTable::default(),
        };
        let data = self.path(&args.data);
        let manifest = if data.is_dir() { data.join("manifest.csv") } else { data };
        Ok(load_dataset(&manifest, table)?)
    }

    fn config(&self, args: &ConfigArgs) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::synthetic();
        if let Some(path) = &args.config {
            cfg.apply_file(&self.path(path))?;
        }
        for o in &args.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ctx = Ctx {
        workdir: cli.workdir.clone(),
    };
    match run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(ctx: &Ctx, command: Command) -> Result<(), CliError> {
    match command {
        Command::GenSynth(a) => gen_synth(ctx, a),
        Command::PreviewAug(a) => preview(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::CheckGrad(a) => check_grad(a),
        Command::Ablate(a) => ablate(ctx, a),
    }
}

fn gen_synth(ctx: &Ctx, a: GenSynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        identities: a.ids,
        outfits: a.outfits,
        per_outfit: a.per_outfit,
        height: a.height,
        width: a.width,
        test_identities: a.test_ids,
        clothes_spread: a.clothes_spread,
        ..SynthConfig::default()
    };
    let out = ctx.path(&a.out);
    let ds = generate_synthetic(&cfg, &mut RngStream::new(a.seed), &out)?;
    println!(
        "wrote {} records ({} identities) to {}",
        ds.len(),
        ds.identity_index().len(),
        out.join("manifest.csv").display()
    );
    Ok(())
}

const PALETTE: [[u8; 3]; 6] = [
    [0, 0, 0],
    [230, 190, 40],
    [200, 40, 40],
    [40, 80, 200],
    [60, 180, 75],
    [150, 60, 180],
];

fn colorize(mask: &SemanticMask) -> Image {
    let bytes: Vec<u8> = mask.labels().iter().flat_map(|&l| PALETTE[l as usize]).collect();
    Image::from_rgb8(mask.height(), mask.width(), &bytes).expect("sizes match")
}

/// Places images side by side with a one-pixel white gutter.
fn hconcat(images: &[Image]) -> Image {
    let h = images[0].height();
    let w: usize = images.iter().map(Image::width).sum::<usize>() + images.len() - 1;
    let mut out = Image::filled(3, h, w, 1.0);
    let mut x0 = 0;
    for img in images {
        for c in 0..3 {
            for r in 0..h {
                for col in 0..img.width() {
                    out.set(c, r, x0 + col, img.get(c, r, col));
                }
            }
        }
        x0 += img.width() + 1;
    }
    out
}

fn preview(ctx: &Ctx, a: PreviewArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.data)?;
    let cfg = ctx.config(&a.config)?;
    let train = ds.indices_in(clothswap_core::Split::Train);
    if a.n == 0 || a.n > train.len() {
        return Err(CliError::Usage(format!(
            "--n must be between 1 and the {} training records",
            train.len()
        )));
    }
    let root = RngStream::new(cfg.seed);
    let mut pick_rng = root.split("preview-pick");
    let mut pool = train.clone();
    pick_rng.shuffle(&mut pool);
    let indices = &pool[..a.n];
    let store = SampleStore::load(&ds, &[clothswap_core::Split::Train])?;
    let mut rng = root.split("preview");
    let batch: Batch = prepare_batch(&ds, &store, indices, &cfg, &mut rng)?;
    let generated = sampling::generate(&batch, &cfg.sampling, &mut rng)?;

    let out = ctx.path(&a.out);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;
    for (k, ((img, mask), gen)) in batch
        .images()
        .iter()
        .zip(batch.masks())
        .zip(generated.images())
        .enumerate()
    {
        let strip = hconcat(&[img.clone(), colorize(mask), gen.clone()]);
        write_rgb_png(&out.join(format!("triptych_{k:03}.png")), &strip)?;
    }
    println!("wrote {} triptychs to {}", a.n, out.display());
    Ok(())
}

fn print_results(res: &clothswap_core::trainer::ExperimentResult) {
    println!("[{}] seed {} steps {}", res.row, res.seed, res.steps);
    print!("{}", format_table(&res.results));
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.data)?;
    let cfg = ctx.config(&a.config)?;
    let out = ctx.path(&a.out);
    let res = run_experiment(&cfg, &ds, &out)?;
    print_results(&res);
    Ok(())
}

fn ablate(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.data)?;
    let cfg = ctx.config(&a.config)?;
    let out = ctx.path(&a.out);
    for res in run_ablation(&cfg, &ABLATION_ROWS, &ds, &out)? {
        print_results(&res);
    }
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.data)?;
    let net = load_checkpoint(&ctx.path(&a.checkpoint))?;
    let modes: Vec<ProtocolMode> = match a.mode.as_str() {
        "both" => ProtocolMode::ALL.to_vec(),
        m => vec![m.parse()?],
    };
    let store = SampleStore::load_all(&ds)?;
    let ids: Vec<&str> = ds.records().iter().map(|r| r.identity.as_str()).collect();
    let mut results = Vec::new();
    for mode in modes {
        let p = build_protocol(&ds, mode)?;
        let mut needed: Vec<usize> = p.query.iter().chain(&p.gallery).copied().collect();
        needed.sort_unstable();
        let emb = embed_records(&net, &store, &needed, ds.len())?;
        results.push(evaluate(&emb, &ids, &p)?);
    }
    print!("{}", format_table(&results));
    match &a.out {
        Some(dir) => {
            let dir = ctx.path(dir);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
            for r in &results {
                let path = dir.join(format!("eval_{}.json", r.mode));
                std::fs::write(&path, r.to_json()).map_err(|e| CliError::Io(path, e))?;
            }
        }
        None => {
            for r in &results {
                println!("{}", r.to_json());
            }
        }
    }
    Ok(())
}

fn check_grad(a: CheckGradArgs) -> Result<(), CliError> {
    let root = RngStream::new(a.seed);
    let mut all_pass = true;
    for i in 0..a.configs {
        let mut rng = root.split_index("config", i as u64);
        let problem_rng = &mut rng;
        let widths = vec![1 + problem_rng.below(3), 1 + problem_rng.below(3)];
        let arch = Architecture {
            in_channels: 3,
            input_height: 8,
            input_width: 8,
            widths,
            embed_dim: 2 + problem_rng.below(3),
            num_classes: 2,
        };
        let net = EmbeddingNet::init(arch, problem_rng)?;
        let b = 2;
        let inputs: Vec<Image> = (0..2 * b)
            .map(|_| Image::new(3, 8, 8, (0..192).map(|_| problem_rng.uniform()).collect()).expect("dims"))
            .collect();
        let problem = GradCheckProblem {
            inputs,
            labels: vec![0, 1, 0, 1],
            pairs: Some(b),
            loss: LossConfig {
                margin: 0.3,
                mse_mode: if i % 2 == 0 { MseMode::L2Norm } else { MseMode::SquaredL2 },
            },
        };
        let report = check_gradients(&net, &problem, a.eps)?;
        let ok = report.passes(a.tol) && report.checked > 0;
        all_pass &= ok;
        println!(
            "config {i}: {} checked, {} skipped, max rel error {:.3e} {}",
            report.checked,
            report.skipped,
            report.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Core(Error::Training("gradient check failed".into())))
    }
}
