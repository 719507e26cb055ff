mod provenance;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use laguna_core::benchmark::{self, HarnessConfig, SynthConfig};
use laguna_core::classifier::{
    evaluate_split, export_embeddings, train_classifier, AblationPreset, ClassifierBundle, TargetStructure, TrainConfig,
};
use laguna_core::data::{load_manifest, subsample_target, Dataset, Domain};
use laguna_core::relative::AnchorSet;
use laguna_core::supervisor::{pseudo_label, supervisor_accuracy, train_supervisor, PseudoLabelTable, SupervisorConfig, SupervisorModel};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use provenance::Provenance;

const CHECKPOINT_DIR: &str = "checkpoint";
const PSEUDO_CSV: &str = "pseudo_labels.csv";
const PSEUDO_Z: &str = "pseudo_z.emb";

#[derive(Parser)]
#[command(name = "laguna", version, about = "Language-guided unsupervised domain adaptation on embedding files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain benchmark.
    Synth(SynthArgs),
    /// Train the caption supervisor on source captions.
    TrainSupervisor(SupervisorArgs),
    /// Label target samples with a trained supervisor.
    PseudoLabel(PseudoLabelArgs),
    /// Train the visual classifier on source labels and target pseudo-labels.
    TrainClassifier(ClassifierArgs),
    /// Score a trained classifier on a labeled split.
    Eval(EvalArgs),
    /// Write absolute and relative embeddings of every sample as CSV.
    Export(ExportArgs),
    /// Run the ablation ladder, or a target-ratio sweep with --ratios.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Common {
    /// Seed; falls back to LAGUNA_SEED, then to the config file, then 0.
    #[arg(long, env = "LAGUNA_SEED")]
    seed: Option<u64>,
    /// JSON file overriding configuration fields; explicit flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    anchor_dim: Option<usize>,
    #[arg(long)]
    caption_dim: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Rotation angle in degrees, in [0, 180].
    #[arg(long)]
    rotation_deg: Option<f64>,
    #[arg(long)]
    translation: Option<f64>,
    #[arg(long)]
    feature_scale: Option<f64>,
    #[arg(long)]
    noise_features: Option<f64>,
    #[arg(long)]
    noise_captions: Option<f64>,
}

#[derive(Args)]
struct SupervisorArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Default 5.
    #[arg(long)]
    epochs: Option<usize>,
    /// Default 64.
    #[arg(long)]
    batch: Option<usize>,
    /// Default 1e-4.
    #[arg(long)]
    lr: Option<f64>,
    /// Default 1.0.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Default 0.1.
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Supervisor run directory or its checkpoint directory.
    #[arg(long)]
    supervisor: PathBuf,
    /// Fraction of target samples to label, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    target_ratio: f64,
}

#[derive(Args)]
struct ClassifierArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `pseudo-label`.
    #[arg(long)]
    pseudo_labels: PathBuf,
    /// Default 10.
    #[arg(long)]
    epochs: Option<usize>,
    /// Default 32.
    #[arg(long)]
    batch: Option<usize>,
    /// Default 1e-4.
    #[arg(long)]
    lr: Option<f64>,
    /// Default 1.0.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Default 0.1.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Default 0.001.
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    target_structure: Option<StructureArg>,
    /// Default full.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    target_ratio: Option<f64>,
    #[arg(long)]
    attention_heads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Classifier run directory or its checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Target)]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Label target rows with these pseudo-labels instead of model predictions.
    #[arg(long)]
    pseudo_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated presets.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = PresetArg::all())]
    presets: Vec<PresetArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    /// Run a target-ratio sweep over these ratios instead of the ladder.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Raise both learning rates to the desk-scale value.
    #[arg(long)]
    desk: bool,
    /// JSON file with `supervisor` and `classifier` config overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Caption,
    PseudoAnchor,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    S1,
    S2,
    S3,
    S4,
    S5,
    Full,
}

impl PresetArg {
    fn all() -> [Self; 6] {
        [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::Full]
    }

    fn preset(self) -> AblationPreset {
        AblationPreset::ALL[Self::all().iter().position(|&p| p == self).unwrap()]
    }
}

impl fmt::Display for PresetArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.preset().name())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Source,
    Target,
}

/// Bad flags or unusable inputs; maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let bad_input = err.chain().any(|e| {
        e.is::<UsageError>() || e.downcast_ref::<laguna_core::Error>().is_some_and(laguna_core::Error::is_usage)
    });
    if bad_input {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainSupervisor(a) => cmd_train_supervisor(a),
        Command::PseudoLabel(a) => cmd_pseudo_label(a),
        Command::TrainClassifier(a) => cmd_train_classifier(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

// ---------------------------------------------------------------- helpers

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Defaults, overlaid with the JSON file when one is given.
fn load_config<C: Serialize + DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    require(path, "config file")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let patch: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut base = serde_json::to_value(C::default())?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dataset(manifest: &Path) -> Result<(Dataset<f64>, AnchorSet<f64>)> {
    require(manifest, "manifest")?;
    let d = load_manifest::<f64>(manifest)?;
    let reference = AnchorSet::reference(d.reference_anchors.clone())?;
    Ok((d, reference))
}

/// Accepts either a run directory or the checkpoint directory inside it.
fn checkpoint_dir(path: &Path, what: &str) -> Result<PathBuf> {
    require(path, what)?;
    let nested = path.join(CHECKPOINT_DIR);
    Ok(if nested.is_dir() { nested } else { path.to_path_buf() })
}

fn load_table(dir: &Path, reference: &AnchorSet<f64>) -> Result<PseudoLabelTable<f64>> {
    require(dir, "pseudo-label directory")?;
    let (csv, z) = (dir.join(PSEUDO_CSV), dir.join(PSEUDO_Z));
    require(&csv, "pseudo-label table")?;
    require(&z, "pseudo-label embeddings")?;
    Ok(PseudoLabelTable::load(&csv, &z, reference)?)
}

fn load_bundle(path: &Path) -> Result<ClassifierBundle<f64>> {
    Ok(ClassifierBundle::load(&checkpoint_dir(path, "model")?)?.0)
}

// ---------------------------------------------------------------- subcommands

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_config(a.common.config.as_deref())?;
    set(&mut cfg.n_classes, a.classes);
    set(&mut cfg.feature_dim, a.feature_dim);
    set(&mut cfg.anchor_dim, a.anchor_dim);
    set(&mut cfg.caption_dim, a.caption_dim);
    set(&mut cfg.samples_per_class_per_domain, a.samples_per_class);
    set(&mut cfg.shift.rotation_deg, a.rotation_deg);
    set(&mut cfg.shift.translation, a.translation);
    set(&mut cfg.shift.scale, a.feature_scale);
    set(&mut cfg.noise_sigma_features, a.noise_features);
    set(&mut cfg.noise_sigma_captions, a.noise_captions);
    set(&mut cfg.seed, a.common.seed);
    cfg.validate()?;
    prepare_out(&a.common.out)?;
    let manifest = benchmark::generate(&cfg, &a.common.out)?;
    Provenance::new("synth", Some(cfg.seed), &cfg).finish(&a.common.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train_supervisor(a: SupervisorArgs) -> Result<()> {
    let mut cfg: SupervisorConfig = load_config(a.common.config.as_deref())?;
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.batch_size, a.batch);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.weights.lambda1, a.lambda1);
    set(&mut cfg.weights.lambda2, a.lambda2);
    set(&mut cfg.weight_decay, a.weight_decay);
    set(&mut cfg.temperature, a.temperature);
    set(&mut cfg.seed, a.common.seed);
    cfg.validate()?;
    let (d, reference) = dataset(&a.manifest)?;

    let run = train_supervisor(&d, &reference, &cfg)?;
    let source_accuracy = supervisor_accuracy(&run.model, &d, &reference, Domain::Source)?;
    let out = &a.common.out;
    prepare_out(out)?;
    run.model
        .save(&out.join(CHECKPOINT_DIR), json!({ "config": cfg, "config_hash": cfg.hash() }))?;
    write_json(
        &out.join("metrics.json"),
        &json!({ "source_accuracy": source_accuracy, "epoch_losses": run.epoch_losses }),
    )?;
    let mut prov = Provenance::new("train-supervisor", Some(cfg.seed), &cfg);
    prov.manifest(&a.manifest)?;
    prov.finish(out)?;
    println!("source accuracy {:.4}", source_accuracy);
    Ok(())
}

fn cmd_pseudo_label(a: PseudoLabelArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let (d, reference) = dataset(&a.manifest)?;
    let ckpt = checkpoint_dir(&a.supervisor, "supervisor checkpoint")?;
    let (model, _) = SupervisorModel::<f64>::load(&ckpt)?;
    let blind = subsample_target(&d.without_target_labels(), a.target_ratio, seed)?;
    let table = pseudo_label(&model, &blind, &reference)?;

    let out = &a.common.out;
    prepare_out(out)?;
    table.save(&out.join(PSEUDO_CSV), &out.join(PSEUDO_Z))?;
    // ground truth, when the manifest has it, is read only for this report
    let accuracy = d.target_eval_labels().map(|truth| {
        let hits = table.rows().iter().filter(|p| truth[p.index] == p.label).count();
        hits as f64 / table.len().max(1) as f64
    });
    write_json(&out.join("summary.json"), &json!({ "rows": table.len(), "pseudo_label_accuracy": accuracy }))?;
    let cfg = json!({ "target_ratio": a.target_ratio, "seed": seed });
    let mut prov = Provenance::new("pseudo-label", Some(seed), &cfg);
    prov.manifest(&a.manifest)?;
    prov.input(&ckpt)?;
    prov.finish(out)?;
    println!("{} target samples labeled", table.len());
    Ok(())
}

fn cmd_train_classifier(a: ClassifierArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_config(a.common.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg = cfg.with_preset(p.preset());
    } else if a.common.config.is_none() {
        cfg = cfg.with_preset(AblationPreset::Full);
    }
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.batch_size, a.batch);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.weights.lambda1, a.lambda1);
    set(&mut cfg.weights.lambda2, a.lambda2);
    set(&mut cfg.weights.lambda3, a.lambda3);
    set(&mut cfg.weight_decay, a.weight_decay);
    set(&mut cfg.target_ratio, a.target_ratio);
    set(&mut cfg.attention_heads, a.attention_heads);
    set(
        &mut cfg.target_structure,
        a.target_structure.map(|s| match s {
            StructureArg::Caption => TargetStructure::Caption,
            StructureArg::PseudoAnchor => TargetStructure::PseudoAnchor,
        }),
    );
    set(&mut cfg.seed, a.common.seed);
    cfg.validate()?;

    let (d, reference) = dataset(&a.manifest)?;
    let table = load_table(&a.pseudo_labels, &reference)?;
    // a subsampled table restricts the target set to the rows it labels
    let mut blind = d.without_target_labels();
    blind.target_samples.retain(|s| table.get(s.index).is_some());
    let bundle = train_classifier(&blind, &reference, &table, &cfg)?;

    let out = &a.common.out;
    prepare_out(out)?;
    bundle.save(&out.join(CHECKPOINT_DIR), json!({}))?;
    bundle.write_loss_csv(&out.join("loss.csv"))?;
    let loss_curve: Vec<f64> = bundle.log.iter().map(|s| s.total).collect();
    let mut metrics = json!({ "loss_curve": loss_curve });
    if d.has_target_eval_labels() {
        let eval = evaluate_split(&bundle.model, &d, Domain::Target)?;
        merge(&mut metrics, serde_json::to_value(&eval)?);
        println!("target accuracy {:.4}", eval.accuracy);
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    let mut prov = Provenance::new("train-classifier", Some(cfg.seed), &cfg);
    prov.manifest(&a.manifest)?;
    prov.input(&a.pseudo_labels.join(PSEUDO_CSV))?;
    prov.input(&a.pseudo_labels.join(PSEUDO_Z))?;
    prov.finish(out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (d, _) = dataset(&a.manifest)?;
    let bundle = load_bundle(&a.model)?;
    let split = match a.split {
        SplitArg::Source => Domain::Source,
        SplitArg::Target => Domain::Target,
    };
    let eval = evaluate_split(&bundle.model, &d, split)?;
    prepare_out(&a.out)?;
    let loss_curve: Vec<f64> = bundle.log.iter().map(|s| s.total).collect();
    let mut metrics = serde_json::to_value(&eval)?;
    merge(&mut metrics, json!({ "split": split.as_str(), "loss_curve": loss_curve }));
    write_json(&a.out.join("metrics.json"), &metrics)?;
    let mut prov = Provenance::new("eval", None, &json!({ "split": split.as_str() }));
    prov.manifest(&a.manifest)?;
    prov.input(&checkpoint_dir(&a.model, "model")?)?;
    prov.finish(&a.out)?;
    println!("{} accuracy {:.4}", split.as_str(), eval.accuracy);
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let (d, reference) = dataset(&a.manifest)?;
    let bundle = load_bundle(&a.model)?;
    let table = a.pseudo_labels.as_deref().map(|p| load_table(p, &reference)).transpose()?;
    prepare_out(&a.out)?;
    let summary = export_embeddings(&bundle.model, &d, table.as_ref(), &reference, &a.out.join("embeddings.csv"))?;
    write_json(&a.out.join("separation.json"), &summary)?;
    let mut prov = Provenance::new("export", None, &json!({ "pseudo_labels": table.is_some() }));
    prov.manifest(&a.manifest)?;
    prov.input(&checkpoint_dir(&a.model, "model")?)?;
    if let Some(p) = &a.pseudo_labels {
        prov.input(p)?;
    }
    prov.finish(&a.out)?;
    println!(
        "{} rows; separation absolute {:.4} relative {:.4}",
        summary.rows, summary.separation.absolute, summary.separation.relative
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut base: HarnessConfig = load_config(a.config.as_deref())?;
    if a.desk {
        base.supervisor.lr = benchmark::DESK_LR;
        base.classifier.lr = benchmark::DESK_LR;
    }
    require(&a.manifest, "manifest")?;
    prepare_out(&a.out)?;
    let table = match &a.ratios {
        Some(ratios) => {
            let rep = benchmark::run_ratio_sweep(&a.manifest, ratios, &a.seeds, &base)?;
            write_json(&a.out.join("ratio_sweep.json"), &rep)?;
            rep.to_markdown()
        }
        None => {
            let presets: Vec<AblationPreset> = a.presets.iter().map(|p| p.preset()).collect();
            let rep = benchmark::run_ablation(&a.manifest, &presets, &a.seeds, &base)?;
            write_json(&a.out.join("ablation.json"), &rep)?;
            rep.to_markdown()
        }
    };
    let name = if a.ratios.is_some() { "ratio_sweep.md" } else { "ablation.md" };
    fs::write(a.out.join(name), &table).with_context(|| format!("writing {name}"))?;
    let cfg = json!({ "harness": base, "seeds": a.seeds, "ratios": a.ratios });
    let mut prov = Provenance::new("ablate", None, &cfg);
    prov.manifest(&a.manifest)?;
    prov.finish(&a.out)?;
    print!("{table}");
    Ok(())
}
