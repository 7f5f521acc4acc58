#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use bundlecodec::analysis::{emit_plots, pca_project, perturb_sweep, silhouette, LabelledProjection, PerturbSpec};
use bundlecodec::codec::{check_model_gradients, BottleneckKind};
use bundlecodec::curves::{make_groups, normalize_bundles, resample_arclength, synth_bundle, Bundle, SynthFamily};
use bundlecodec::dataio::{
    append_latents, balance_and_split, export_latents, import_trackvis, read_bnd, read_checkpoint, read_latents,
    write_bnd, write_latents, BndDataset, SplitSpec,
};
use bundlecodec::diffnum::{check_primitives, Rng, Tensor};
use bundlecodec::klcheck::{kl_closed_form, kl_numeric, KlMethod, KlParams};
use bundlecodec::metrics::BuanConfig;
use bundlecodec::trainer::{evaluate_model, evaluate_split, model_from_checkpoint, resume_run, train_run, TrainConfig};

#[derive(Parser)]
#[command(name = "bundlecodec", version, about = "Vector-quantized autoencoders for streamline bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Seed {
    /// Seed for every random draw the command makes
    #[arg(long)]
    seed: Option<u64>,
}

impl Seed {
    fn get(self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-family dataset
    Synth(SynthArgs),
    /// Import tractography files as fixed-size bundles of one class
    Import(ImportArgs),
    /// Balance, split and normalize a dataset
    Prep(PrepArgs),
    /// Train one architecture
    Train(TrainArgs),
    /// Reconstruction report for a checkpoint on a dataset
    Eval(EvalArgs),
    /// Export per-bundle latents
    Latents(LatentArgs),
    /// Latent perturbation sweep
    Perturb(PerturbArgs),
    /// 2-D PCA projection of exported latents
    Project(ProjectArgs),
    /// Compare the closed-form Gaussian/Gumbel KL with numerical estimates
    Klcheck(KlArgs),
    /// Finite-difference checks of every primitive and every architecture
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of curve families (at most 5)
    #[arg(long, default_value_t = 4)]
    families: usize,
    /// Bundles generated per family
    #[arg(long, default_value_t = 100)]
    bundles_per_family: usize,
    /// Streamlines per bundle
    #[arg(long, default_value_t = 64)]
    group_size: usize,
    /// Points per streamline
    #[arg(long, default_value_t = 64)]
    points: usize,
    /// Geometric dispersion
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[command(flatten)]
    seed: Seed,
    /// Output BND1 file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// Tractography files
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Class label given to every imported bundle
    #[arg(long)]
    label: String,
    /// Streamlines per bundle
    #[arg(long, default_value_t = 64)]
    group_size: usize,
    /// Points per streamline
    #[arg(long, default_value_t = 64)]
    points: usize,
    /// Add the bundles to an existing output file instead of replacing it
    #[arg(long)]
    append: bool,
    #[command(flatten)]
    seed: Seed,
    /// Output BND1 file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepArgs {
    /// Input BND1 file
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving train.bnd, val.bnd and norm.json
    #[arg(long)]
    out: PathBuf,
    /// Fraction of each class used for training
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Keep every bundle instead of down-sampling to the smallest class
    #[arg(long)]
    no_balance: bool,
    /// Comma-separated classes that must be present
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct TrainArgs {
    /// ae, vae, vqvae, vqema or vqdiff
    #[arg(long)]
    arch: Option<BottleneckKind>,
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training BND1 file
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Validation BND1 file, evaluated after training
    #[arg(long)]
    val: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training iterations
    #[arg(long)]
    iterations: Option<usize>,
    /// Bundles per iteration
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Convolution channels
    #[arg(long)]
    channels: Option<usize>,
    /// Points per streamline (default: taken from the data unless a config is given)
    #[arg(long)]
    points: Option<usize>,
    /// Loss log CSV (default: next to the checkpoint)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write a checkpoint every N iterations
    #[arg(long)]
    eval_every: Option<usize>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// BND1 dataset
    #[arg(long)]
    data: PathBuf,
    /// Refuse checkpoints of another architecture
    #[arg(long)]
    arch: Option<BottleneckKind>,
    /// Adjacency threshold in normalized units
    #[arg(long, default_value_t = 0.05)]
    theta: f64,
    /// Per-class CSV report
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct LatentArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// BND1 dataset
    #[arg(long)]
    data: PathBuf,
    /// Output BNL1 file
    #[arg(long)]
    out: PathBuf,
    /// Record tag (default: the architecture name)
    #[arg(long)]
    tag: Option<String>,
    /// Append to an existing latent file
    #[arg(long)]
    append: bool,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct PerturbArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// BND1 dataset
    #[arg(long)]
    data: PathBuf,
    /// Sweep only this bundle (default: every bundle)
    #[arg(long)]
    bundle_index: Option<usize>,
    /// Comma-separated perturbation magnitudes, ascending and including 0
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25,0.5,1.0")]
    eps: Vec<f64>,
    /// Noise draws per magnitude
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Adjacency threshold in normalized units
    #[arg(long, default_value_t = 0.05)]
    theta: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct ProjectArgs {
    /// BNL1 file
    #[arg(long)]
    latents: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct KlArgs {
    /// Gaussian standard deviation
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Gumbel scale
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct GradArgs {
    /// Check one architecture only
    #[arg(long)]
    arch: Option<BottleneckKind>,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Random points per primitive
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[command(flatten)]
    seed: Seed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Import(a) => import(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Latents(a) => latents(a),
        Command::Perturb(a) => perturb(a),
        Command::Project(a) => project(a),
        Command::Klcheck(a) => klcheck(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn load_bundles(path: &Path) -> Result<BndDataset> {
    read_bnd(path).with_context(|| format!("dataio: reading dataset {}", path.display()))
}

fn save_bundles(bundles: Vec<Bundle>, path: &Path) -> Result<()> {
    let ds = BndDataset::from_bundles(bundles).with_context(|| format!("dataio: building {}", path.display()))?;
    write_bnd(&ds, path).with_context(|| format!("dataio: writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.families == 0 || a.families > SynthFamily::ALL.len() {
        bail!("curves: --families must lie in 1..={}", SynthFamily::ALL.len());
    }
    let mut rng = Rng::new(a.seed.get());
    let mut bundles = Vec::new();
    for family in &SynthFamily::ALL[..a.families] {
        for i in 0..a.bundles_per_family {
            let mut b = synth_bundle(*family, a.group_size, a.points, a.noise, &mut rng).context("curves: synthesis")?;
            b.provenance = format!("synth-{}-{i}", family.name());
            bundles.push(b);
        }
    }
    let n = bundles.len();
    save_bundles(bundles, &a.out)?;
    println!("wrote {n} bundles to {}", a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> Result<()> {
    let mut rng = Rng::new(a.seed.get());
    let mut bundles = if a.append && a.out.exists() { load_bundles(&a.out)?.bundles } else { Vec::new() };
    for input in &a.inputs {
        let tracks = import_trackvis(input).with_context(|| format!("dataio: importing {}", input.display()))?;
        let Some(provenance) = tracks.first().map(|t| t.1.clone()) else {
            log::warn!("{}: no streamlines", input.display());
            continue;
        };
        let mut resampled = Vec::with_capacity(tracks.len());
        for (s, _) in &tracks {
            let r = resample_arclength(s, a.points).context("curves: resampling")?;
            if r.degenerate {
                log::warn!("{}: skipping a zero-length streamline", input.display());
                continue;
            }
            resampled.push(r.streamline);
        }
        let groups = make_groups(resampled, a.group_size, &a.label, &provenance, &mut rng).context("curves: grouping")?;
        println!("{}: {} streamlines -> {} bundles", input.display(), tracks.len(), groups.len());
        bundles.extend(groups);
    }
    if bundles.is_empty() {
        bail!("dataio: no complete bundle could be formed from the inputs");
    }
    save_bundles(bundles, &a.out)
}

fn prep(a: PrepArgs) -> Result<()> {
    let ds = load_bundles(&a.data)?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        seed: a.seed.get(),
        balance: !a.no_balance,
        classes: a.classes,
    };
    let mut split = balance_and_split(ds.bundles, &spec).context("dataio: splitting")?;
    let stats = normalize_bundles(&mut split.train, &mut split.val).context("curves: normalization")?;
    create_dir(&a.out)?;
    let (nt, nv) = (split.train.len(), split.val.len());
    save_bundles(split.train, &a.out.join("train.bnd"))?;
    save_bundles(split.val, &a.out.join("val.bnd"))?;
    let norm = serde_json::json!({ "normalization": stats, "split": spec });
    let path = a.out.join("norm.json");
    std::fs::write(&path, serde_json::to_string_pretty(&norm)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("train {nt} bundles, val {nv} bundles, scale {}", stats.scale);
    Ok(())
}

fn train_config(a: &TrainArgs, data: &BndDataset) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("trainer: config {}", p.display()))?,
        None => TrainConfig { points: data.point_count, ..TrainConfig::default() },
    };
    if let Some(v) = a.points {
        cfg.points = v;
    }
    if let Some(v) = a.arch {
        cfg.arch = v;
    }
    if let Some(v) = a.seed.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.channels {
        cfg.channels = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    cfg.checkpoint_path = Some(a.out.clone());
    if let Some(v) = &a.log {
        cfg.log_path = Some(v.clone());
    } else if cfg.log_path.is_none() {
        cfg.log_path = Some(a.out.with_extension("loss.csv"));
    }
    cfg.validate().context("trainer: config")?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let data = load_bundles(&a.data)?;
    let cfg = train_config(&a, &data)?;
    if data.point_count != cfg.points {
        bail!(
            "trainer: {} has {} points per streamline, config expects {}",
            a.data.display(),
            data.point_count,
            cfg.points
        );
    }
    eprintln!("{}", cfg.to_json());
    let out = match &a.resume {
        Some(p) => {
            let ckpt = read_checkpoint(p).with_context(|| format!("dataio: reading checkpoint {}", p.display()))?;
            resume_run(&cfg, &ckpt, &data.bundles).context("trainer: resume")?
        }
        None => train_run(&cfg, &data.bundles).context("trainer")?,
    };
    if let Some(last) = out.log.last() {
        println!("{}: iteration {} loss {:.6e} recon {:.6e}", cfg.arch, last.iteration, last.loss, last.recon);
    }
    if let Some(v) = &a.val {
        let val = load_bundles(v)?;
        let model = out.model().context("trainer: rebuilding model")?;
        let ev = evaluate_model(&model, &val.bundles, &BuanConfig::default()).context("metrics: evaluation")?;
        print!("{}", ev.report.to_table());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.ckpt).with_context(|| format!("dataio: reading checkpoint {}", a.ckpt.display()))?;
    let data = load_bundles(&a.data)?;
    let buan = BuanConfig::new(a.theta).context("metrics")?;
    let ev = evaluate_split(&ckpt, &data.bundles, a.arch, &buan)
        .with_context(|| format!("metrics: evaluating {} on {}", a.ckpt.display(), a.data.display()))?;
    print!("{}", ev.report.to_table());
    println!("mean loss {:.6e}", ev.mean_loss);
    if let Some(out) = &a.out {
        std::fs::write(out, ev.report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn latents(a: LatentArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.ckpt).with_context(|| format!("dataio: reading checkpoint {}", a.ckpt.display()))?;
    let (cfg, model) = model_from_checkpoint(&ckpt).context("trainer: loading checkpoint")?;
    let data = load_bundles(&a.data)?;
    let tag = a.tag.unwrap_or_else(|| cfg.arch.to_string());
    let records = export_latents(&model, &data.bundles, &tag).context("codec: encoding")?;
    if a.append && a.out.exists() {
        append_latents(&records, &a.out)
    } else {
        write_latents(&records, &a.out)
    }
    .with_context(|| format!("dataio: writing {}", a.out.display()))?;
    println!("wrote {} records tagged {tag} to {}", records.len(), a.out.display());
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.ckpt).with_context(|| format!("dataio: reading checkpoint {}", a.ckpt.display()))?;
    let (cfg, model) = model_from_checkpoint(&ckpt).context("trainer: loading checkpoint")?;
    let data = load_bundles(&a.data)?;
    let bundles = match a.bundle_index {
        Some(i) => match data.bundles.get(i) {
            Some(b) => vec![b.clone()],
            None => bail!("analysis: bundle index {i} out of {} in {}", data.bundles.len(), a.data.display()),
        },
        None => data.bundles,
    };
    let spec = PerturbSpec { eps: a.eps, seed: a.seed.get(), trials: a.trials };
    let buan = BuanConfig::new(a.theta).context("metrics")?;
    let table = perturb_sweep(&model, &bundles, &spec, &buan).context("analysis: perturbation sweep")?;
    print!("{}", table.to_csv());
    create_dir(&a.out)?;
    let files = emit_plots(&[(cfg.arch.to_string(), table)], &[], &a.out).context("analysis: plots")?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    let records = read_latents(&a.latents).with_context(|| format!("dataio: reading {}", a.latents.display()))?;
    let mut tags: Vec<&str> = records.iter().map(|r| r.tag.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();
    let mut projections = Vec::new();
    for tag in &tags {
        let rows: Vec<_> = records.iter().filter(|r| r.tag == *tag).collect();
        // one point per bundle: the mean of its streamline latents
        let d = rows[0].z.shape()[1];
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in &rows {
            let n = r.z.shape()[0] as f64;
            let mut mean = vec![0.0; d];
            for row in r.z.data().chunks_exact(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n;
                }
            }
            data.extend(mean);
        }
        let x = Tensor::new(vec![rows.len(), d], data)?;
        let proj = pca_project(&x, 2).with_context(|| format!("analysis: projecting {tag}"))?;
        let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
        projections.push((tag.to_string(), proj, labels));
    }
    for (tag, proj, labels) in &projections {
        let mut classes: Vec<&String> = labels.iter().collect();
        classes.sort_unstable();
        classes.dedup();
        let ids: Vec<usize> = labels.iter().map(|l| classes.binary_search(&l).unwrap()).collect();
        let sil = if classes.len() >= 2 { silhouette(&proj.coords, &ids).ok() } else { None };
        println!(
            "{tag}: explained {:.4} {:.4}{}",
            proj.explained[0],
            proj.explained[1],
            sil.map(|s| format!(", silhouette {s:.4}")).unwrap_or_default()
        );
    }
    let views: Vec<LabelledProjection> = projections
        .iter()
        .map(|(tag, projection, labels)| LabelledProjection { tag, projection, labels })
        .collect();
    create_dir(&a.out)?;
    for f in emit_plots(&[], &views, &a.out).context("analysis: plots")? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn klcheck(a: KlArgs) -> Result<()> {
    let p = KlParams::new(a.sigma, a.beta).context("klcheck")?;
    let closed = kl_closed_form(&p);
    let quad = kl_numeric(&p, KlMethod::Quadrature).context("klcheck: quadrature")?.value;
    let mc = kl_numeric(&p, KlMethod::MonteCarlo { samples: a.samples, seed: a.seed.get() }).context("klcheck: Monte Carlo")?;
    println!("sigma {} beta {}", a.sigma, a.beta);
    println!("closed form   {closed:.10}");
    println!("quadrature    {quad:.10}  |diff| {:.3e}", (quad - closed).abs());
    println!(
        "monte carlo   {:.10}  |diff| {:.3e}  (std err {:.3e}, {} samples)",
        mc.value,
        (mc.value - closed).abs(),
        mc.std_error.unwrap_or(f64::NAN),
        a.samples
    );
    Ok(())
}

fn gradcheck(a: GradArgs) -> Result<()> {
    let mut failed = Vec::new();
    let mut rng = Rng::new(a.seed.get());
    for (name, r) in check_primitives(&mut rng, a.trials, a.step, a.tol).context("diffnum: gradient check")? {
        println!("{:<12} {:<20} max rel err {:.3e}  {}", "primitive", name, r.max_rel_err, verdict(r.pass));
        if !r.pass {
            failed.push(name.to_string());
        }
    }
    let kinds = match a.arch {
        Some(k) => vec![k],
        None => BottleneckKind::ALL.to_vec(),
    };
    for k in kinds {
        let r = check_model_gradients(k, a.seed.get(), a.step, a.tol).with_context(|| format!("codec: {k} check"))?;
        println!("{:<12} {:<20} max rel err {:.3e}  {}", "model", k.to_string(), r.max_rel_err, verdict(r.pass));
        if !r.pass {
            failed.push(k.to_string());
        }
    }
    if !failed.is_empty() {
        bail!("diffnum: gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}
