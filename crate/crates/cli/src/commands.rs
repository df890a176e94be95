use std::path::{Path, PathBuf};

use aaaseg::anmetrics::{evaluate_case, mann_whitney_u, ReportRow};
use aaaseg::gradsuite::{run_gradient_suite, DEFAULT_INSTANCES};
use aaaseg::hed3d::{split_validation, train_with, Hed3DConfig, Hed3DNet, NetError, TrainConfig};
use aaaseg::phantom::{cohort_plan, generate_phantom, read_manifest, write_cohort, CohortCase, PhantomSpec};
use aaaseg::postseg::postprocess;
use aaaseg::prep::{
    crop_mask, crop_roi, random_crop_containing, resample_nearest, resample_trilinear, to_sample, window_level,
    AugmentPlan, AugmentedDataset, RoiBounds, DEFAULT_WINDOW_CENTER, DEFAULT_WINDOW_WIDTH,
};
use aaaseg::volcore::{BinaryMask3D, Stage, Volume3D};
use aaaseg::volio::{
    load_checkpoint, mean_std, parse_report, read_mask, read_volume, save_checkpoint, write_atomic, write_mask,
    write_report, write_volume, ElementType, ReportRecord,
};
use anyhow::{anyhow, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{load_config, triple, Resolver};
use crate::{
    manifest_path_for, parallel_map, require_dir, require_file, InputContext, RunManifest, UsageError, DIR_MANIFEST,
};

#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// Seed for every random choice of the command [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-case work [default: 1]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Plain-text `key = value` file; flags win over its entries
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Shared start of every command.
struct Run {
    r: Resolver,
    seed: u64,
    threads: usize,
}

impl Run {
    fn start(g: &Global) -> Result<Self> {
        let config = match &g.config {
            Some(p) => load_config(p)?,
            None => Default::default(),
        };
        let r = Resolver::new(config);
        let seed = r.get("seed", g.seed, 0)?;
        let threads = r.get("threads", g.threads, 1)?;
        if threads == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        Ok(Self { r, seed, threads })
    }

    fn manifest(self, command: &str) -> Result<RunManifest> {
        let (seed, threads) = (self.seed, self.threads);
        Ok(RunManifest::new(command, self.r.finish()?, seed, threads))
    }
}

fn windowed(vol: &Volume3D, center: f64, width: f64) -> Result<Volume3D> {
    window_level(vol, center, width).input("window")
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Number of cases; stages alternate pre, post [default: 20]
    #[arg(long)]
    pub n: Option<usize>,
    /// Phantom spec JSON [default: built-in default spec v1]
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn phantom(g: &Global, a: &PhantomArgs) -> Result<()> {
    let run = Run::start(g)?;
    let n: usize = run.r.get("n", a.n, 20)?;
    let spec_path: Option<PathBuf> = run.r.get_opt("spec", a.spec.clone())?;
    let out: PathBuf = run.r.require("out", a.out.clone())?;
    let base = match &spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).input(format!("reading phantom spec {}", p.display()))?;
            PhantomSpec::from_json(&text).input(format!("phantom spec {}", p.display()))?
        }
        None => PhantomSpec::default_v1(),
    };
    base.validate().input("phantom spec")?;
    if n == 0 {
        return Err(UsageError("--n must be at least 1".into()).into());
    }

    let plan = cohort_plan(n, run.seed);
    let generated = parallel_map(&plan, run.threads, |(case_id, stage, case_seed)| {
        let spec = PhantomSpec {
            stage: *stage,
            seed: *case_seed,
            ..base.clone()
        };
        generate_phantom(&spec).map(|(image, mask)| CohortCase {
            case_id: case_id.clone(),
            stage: *stage,
            seed: *case_seed,
            image,
            mask,
        })
    });
    let cases = generated.into_iter().collect::<Result<Vec<_>, _>>().context("generating phantoms")?;
    let entries = write_cohort(&out, &cases, &base).context("writing cohort")?;

    let mut m = run.manifest("phantom")?;
    m.parameters.insert("spec-hash".into(), json!(base.hash()));
    m.inputs.extend(spec_path);
    m.outputs = entries.iter().flat_map(|e| [e.image.clone(), e.mask.clone()]).collect();
    m.outputs.push(out.join("manifest.csv"));
    m.write(&out.join(DIR_MANIFEST))?;
    eprintln!("wrote {n} phantoms to {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Input volume (MetaImage)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output volume
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mask to crop and resample alongside the volume
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output path for the processed mask
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// Inclusive voxel ROI `x0,y0,z0,x1,y1,z1` [default: whole volume]
    #[arg(long)]
    pub roi: Option<String>,
    /// Window center in HU [default: 150]
    #[arg(long, allow_hyphen_values = true)]
    pub window_center: Option<f64>,
    /// Window width in HU [default: 500]
    #[arg(long)]
    pub window_width: Option<f64>,
    /// Keep raw intensities
    #[arg(long)]
    pub no_window: bool,
    /// Resample to `nx,ny,nz` [default: keep dims]
    #[arg(long)]
    pub dims: Option<String>,
}

fn parse_roi(text: &str) -> Result<RoiBounds> {
    let v: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .input(format!("--roi {text:?}"))?;
    if v.len() != 6 {
        return Err(UsageError(format!("--roi needs six values x0,y0,z0,x1,y1,z1, got {text:?}")).into());
    }
    Ok(RoiBounds {
        min: [v[0], v[1], v[2]],
        max: [v[3], v[4], v[5]],
    })
}

pub fn preprocess(g: &Global, a: &PreprocessArgs) -> Result<()> {
    let run = Run::start(g)?;
    let input: PathBuf = run.r.require("input", a.input.clone())?;
    let out: PathBuf = run.r.require("out", a.out.clone())?;
    let mask_in: Option<PathBuf> = run.r.get_opt("mask", a.mask.clone())?;
    let mask_out: Option<PathBuf> = run.r.get_opt("mask-out", a.mask_out.clone())?;
    let roi: Option<String> = run.r.get_opt("roi", a.roi.clone())?;
    let center = run.r.get("window-center", a.window_center, DEFAULT_WINDOW_CENTER)?;
    let width = run.r.get("window-width", a.window_width, DEFAULT_WINDOW_WIDTH)?;
    let no_window = run.r.switch("no-window", a.no_window)?;
    let dims: Option<String> = run.r.get_opt("dims", a.dims.clone())?;
    if mask_in.is_some() != mask_out.is_some() {
        return Err(UsageError("--mask and --mask-out go together".into()).into());
    }

    require_file(&input, "input volume")?;
    let vol = read_volume(&input).input(format!("reading {}", input.display()))?;
    let mask = match &mask_in {
        Some(p) => Some(read_mask(p).input(format!("reading {}", p.display()))?),
        None => None,
    };
    let bounds = match &roi {
        Some(t) => parse_roi(t)?,
        None => RoiBounds::full(vol.dims()),
    };
    let target = dims.as_deref().map(triple::<usize>).transpose()?;

    let mut v = crop_roi(&vol, bounds).input("roi")?;
    if !no_window {
        v = windowed(&v, center, width)?;
    }
    if let Some(t) = target {
        v = resample_trilinear(&v, t).input("resample")?;
    }
    write_volume(&v, &out, ElementType::Float)?;

    let mut m = run.manifest("preprocess")?;
    m.inputs.push(input);
    m.outputs.push(out.clone());
    if let (Some(mask), Some(mask_in), Some(mask_out)) = (mask, mask_in, mask_out) {
        let mut mk = crop_mask(&mask, bounds).input("roi")?;
        if let Some(t) = target {
            mk = resample_nearest(&mk, t).input("resample")?;
        }
        write_mask(&mk, &mask_out)?;
        m.inputs.push(mask_in);
        m.outputs.push(mask_out);
    }
    m.write(&manifest_path_for(&out))?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Cohort directory holding `manifest.csv`
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// History CSV [default: <out>.history.csv]
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Network size: `desk` or `full` [default: desk]
    #[arg(long)]
    pub preset: Option<String>,
    /// Average the loss over side outputs as well as the fused output
    #[arg(long)]
    pub deep_supervision: bool,
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial Adam step size [default: 1e-4]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// [default: 0.2]
    #[arg(long)]
    pub plateau_factor: Option<f64>,
    /// Epochs without improvement before the rate drops [default: 10]
    #[arg(long)]
    pub plateau_patience: Option<u32>,
    /// [default: 1e-6]
    #[arg(long)]
    pub min_learning_rate: Option<f64>,
    /// Share of cases held out for validation [default: 0.2]
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Write `<out>.epochNNNN` every this many epochs; 0 disables [default: 0]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub crops_per_scan: Option<usize>,
    /// Rigid transforms per crop, identity included [default: 35]
    #[arg(long)]
    pub transforms_per_crop: Option<usize>,
    /// Rotation range in degrees, symmetric [default: 10]
    #[arg(long)]
    pub rotation_deg: Option<f64>,
    /// In-plane translation range in voxels, symmetric [default: 10]
    #[arg(long)]
    pub translation_vox: Option<f64>,
    /// [default: 150]
    #[arg(long, allow_hyphen_values = true)]
    pub window_center: Option<f64>,
    /// [default: 500]
    #[arg(long)]
    pub window_width: Option<f64>,
}

fn preset(name: &str) -> Result<Hed3DConfig> {
    match name {
        "desk" => Ok(Hed3DConfig::desk()),
        "full" => Ok(Hed3DConfig::full()),
        other => Err(UsageError(format!("unknown preset {other:?}, expected desk or full")).into()),
    }
}

/// Windowed image and mask of every manifest case.
fn load_cohort(dir: &Path, center: f64, width: f64) -> Result<Vec<(String, Stage, Volume3D, BinaryMask3D)>> {
    require_dir(dir, "cohort directory")?;
    let entries = read_manifest(dir).input(format!("cohort {}", dir.display()))?;
    if entries.is_empty() {
        return Err(UsageError(format!("cohort {} lists no cases", dir.display())).into());
    }
    entries
        .into_iter()
        .map(|e| {
            let image = read_volume(&e.image).input(format!("reading {}", e.image.display()))?;
            let mask = read_mask(&e.mask).input(format!("reading {}", e.mask.display()))?;
            Ok((e.case_id, e.stage, windowed(&image, center, width)?, mask))
        })
        .collect()
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let run = Run::start(g)?;
    let cohort: PathBuf = run.r.require("cohort", a.cohort.clone())?;
    let out: PathBuf = run.r.require("out", a.out.clone())?;
    let history_path = run.r.get("history", a.history.clone(), {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".history.csv");
        out.with_file_name(name)
    })?;
    let mut net_config = preset(&run.r.get("preset", a.preset.clone(), "desk".to_string())?)?;
    net_config.deep_supervision = run.r.switch("deep-supervision", a.deep_supervision)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        epochs: run.r.get("epochs", a.epochs, d.epochs)?,
        batch_size: run.r.get("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: run.r.get("learning-rate", a.learning_rate, d.learning_rate)?,
        plateau_factor: run.r.get("plateau-factor", a.plateau_factor, d.plateau_factor)?,
        plateau_patience: run.r.get("plateau-patience", a.plateau_patience, d.plateau_patience)?,
        min_learning_rate: run.r.get("min-learning-rate", a.min_learning_rate, d.min_learning_rate)?,
        validation_fraction: run.r.get("validation-fraction", a.validation_fraction, d.validation_fraction)?,
        seed: run.seed,
        checkpoint_every: run.r.get("checkpoint-every", a.checkpoint_every, d.checkpoint_every)?,
    };
    let dp = AugmentPlan::default();
    let mut plan = AugmentPlan {
        crops_per_scan: run.r.get("crops-per-scan", a.crops_per_scan, dp.crops_per_scan)?,
        transforms_per_crop: run.r.get("transforms-per-crop", a.transforms_per_crop, dp.transforms_per_crop)?,
        rotation_deg: run.r.get("rotation-deg", a.rotation_deg, dp.rotation_deg)?,
        translation_vox: run.r.get("translation-vox", a.translation_vox, dp.translation_vox)?,
        crop_dims: None,
        seed: run.seed,
    };
    let center = run.r.get("window-center", a.window_center, DEFAULT_WINDOW_CENTER)?;
    let width = run.r.get("window-width", a.window_width, DEFAULT_WINDOW_WIDTH)?;
    net_config.validate().input("network config")?;
    tc.validate().input("training config")?;
    plan.validate().input("augmentation plan")?;

    let cases = load_cohort(&cohort, center, width)?;
    let input_dims = net_config.input_dims;
    if cases.iter().any(|c| c.2.dims() != input_dims) {
        // larger scans are cropped around the aneurysm to the network input
        plan.crop_dims = Some(input_dims);
    }
    let (train_idx, val_idx) = split_validation(cases.len(), tc.validation_fraction, run.seed).input("validation split")?;
    let scans = train_idx.iter().map(|&i| (cases[i].2.clone(), cases[i].3.clone())).collect();
    let train_set = AugmentedDataset::new(scans, plan.clone()).input("augmentation")?;
    let mut val_set = Vec::with_capacity(val_idx.len());
    for (k, &i) in val_idx.iter().enumerate() {
        let (v, m) = (&cases[i].2, &cases[i].3);
        let (v, m) = if v.dims() == input_dims {
            (v.clone(), m.clone())
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
            rng.set_stream(k as u64);
            random_crop_containing(v, m, input_dims, &mut rng).input(format!("validation case {}", cases[i].0))?
        };
        val_set.push(to_sample(&v, &m)?);
    }

    let net = Hed3DNet::build(net_config, run.seed).context("building network")?;
    eprintln!(
        "training on {} samples ({} scans), validating on {} scans, {} parameters",
        train_idx.len() * plan.outputs_per_scan(),
        train_idx.len(),
        val_set.len(),
        net.parameter_count()
    );
    let every = tc.checkpoint_every;
    let outcome = train_with(net, &train_set, &val_set, &tc, |rec, net| {
        eprintln!(
            "epoch {:>4}  train {:.6}  val {:.6}  lr {:e}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.lr
        );
        if every > 0 && rec.epoch % every == 0 {
            let path = out.with_file_name(format!(
                "{}.epoch{:04}",
                out.file_name().unwrap_or_default().to_string_lossy(),
                rec.epoch
            ));
            save_checkpoint(net, &path).map_err(|e| NetError::Source(e.to_string()))?;
        }
        Ok(())
    })
    .context("training")?;

    save_checkpoint(&outcome.net, &out)?;
    write_atomic(&history_path, outcome.history.to_csv().as_bytes())?;
    let mut m = run.manifest("train")?;
    m.parameters.insert("best-epoch".into(), json!(outcome.best_epoch));
    m.parameters.insert("network".into(), serde_json::to_value(outcome.net.config())?);
    m.inputs.push(cohort);
    m.outputs.extend([out.clone(), history_path]);
    m.write(&manifest_path_for(&out))?;
    eprintln!("best epoch {}; wrote {}", outcome.best_epoch, out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A volume, or a cohort directory holding `manifest.csv`
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Mask path for a single volume, output directory for a cohort
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Probability map for a single volume [default: <out stem>_prob.mha]
    #[arg(long)]
    pub prob_out: Option<PathBuf>,
    /// [default: 150]
    #[arg(long, allow_hyphen_values = true)]
    pub window_center: Option<f64>,
    /// [default: 500]
    #[arg(long)]
    pub window_width: Option<f64>,
}

fn predict_one(net: &Hed3DNet, image: &Volume3D, center: f64, width: f64) -> Result<(Volume3D, BinaryMask3D)> {
    let prob = net
        .predict(&windowed(image, center, width)?)
        .map_err(|e| match e {
            NetError::VolumeDims { .. } | NetError::InputShape { .. } => UsageError(e.to_string()).into(),
            other => anyhow!(other),
        })?;
    let mask = postprocess(&prob).context("post-processing")?;
    Ok((prob, mask))
}

pub fn predict(g: &Global, a: &PredictArgs) -> Result<()> {
    let run = Run::start(g)?;
    let ckpt: PathBuf = run.r.require("checkpoint", a.checkpoint.clone())?;
    let input: PathBuf = run.r.require("input", a.input.clone())?;
    let out: PathBuf = run.r.require("out", a.out.clone())?;
    let prob_out: Option<PathBuf> = run.r.get_opt("prob-out", a.prob_out.clone())?;
    let center = run.r.get("window-center", a.window_center, DEFAULT_WINDOW_CENTER)?;
    let width = run.r.get("window-width", a.window_width, DEFAULT_WINDOW_WIDTH)?;

    require_file(&ckpt, "checkpoint")?;
    let net = load_checkpoint(&ckpt).input(format!("loading checkpoint {}", ckpt.display()))?;
    let mut outputs = Vec::new();
    let manifest_path = if input.is_dir() {
        if prob_out.is_some() {
            return Err(UsageError("--prob-out applies to single volumes only".into()).into());
        }
        let entries = read_manifest(&input).input(format!("cohort {}", input.display()))?;
        std::fs::create_dir_all(&out).input(format!("creating {}", out.display()))?;
        for e in &entries {
            let image = read_volume(&e.image).input(format!("reading {}", e.image.display()))?;
            let (prob, mask) = predict_one(&net, &image, center, width).with_context(|| e.case_id.clone())?;
            let (pp, mp) = (out.join(format!("{}_prob.mha", e.case_id)), out.join(format!("{}_pred.mha", e.case_id)));
            write_volume(&prob, &pp, ElementType::Float)?;
            write_mask(&mask, &mp)?;
            outputs.extend([pp, mp]);
        }
        eprintln!("predicted {} cases into {}", entries.len(), out.display());
        out.join(DIR_MANIFEST)
    } else {
        require_file(&input, "input volume")?;
        let image = read_volume(&input).input(format!("reading {}", input.display()))?;
        let (prob, mask) = predict_one(&net, &image, center, width)?;
        let pp = prob_out.unwrap_or_else(|| {
            let stem = out.file_stem().unwrap_or_default().to_string_lossy();
            out.with_file_name(format!("{stem}_prob.mha"))
        });
        write_volume(&prob, &pp, ElementType::Float)?;
        write_mask(&mask, &out)?;
        outputs.extend([pp, out.clone()]);
        manifest_path_for(&out)
    };
    let mut m = run.manifest("predict")?;
    m.inputs.extend([ckpt, input]);
    m.outputs = outputs;
    m.write(&manifest_path)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted masks named `<case><suffix>.mha`
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Cohort directory with ground-truth masks and `manifest.csv`
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// File-name suffix of predicted masks [default: _pred]
    #[arg(long, allow_hyphen_values = true)]
    pub pred_suffix: Option<String>,
}

pub fn evaluate(g: &Global, a: &EvaluateArgs) -> Result<()> {
    let run = Run::start(g)?;
    let pred: PathBuf = run.r.require("pred", a.pred.clone())?;
    let gt: PathBuf = run.r.require("gt", a.gt.clone())?;
    let out: PathBuf = run.r.require("out", a.out.clone())?;
    let suffix = run.r.get("pred-suffix", a.pred_suffix.clone(), "_pred".to_string())?;

    require_dir(&pred, "prediction directory")?;
    require_dir(&gt, "ground-truth directory")?;
    let entries = read_manifest(&gt).input(format!("cohort {}", gt.display()))?;
    let results = parallel_map(&entries, run.threads, |e| -> Result<(ReportRow, PathBuf)> {
        let pp = pred.join(format!("{}{suffix}.mha", e.case_id));
        let p = read_mask(&pp).input(format!("reading {}", pp.display()))?;
        let t = read_mask(&e.mask).input(format!("reading {}", e.mask.display()))?;
        let metrics = evaluate_case(&p, &t).input(format!("case {}", e.case_id))?;
        Ok((
            ReportRow {
                case_id: e.case_id.clone(),
                stage: e.stage,
                metrics,
            },
            pp,
        ))
    });
    let mut rows = Vec::with_capacity(entries.len());
    let mut inputs = vec![pred.clone(), gt.clone()];
    for r in results {
        let (row, pp) = r?;
        rows.push(row);
        inputs.push(pp);
    }
    write_report(&rows, &out)?;
    let dice: Vec<f64> = rows.iter().map(|r| r.metrics.dice).collect();
    if let Some((mean, sd)) = mean_std(&dice) {
        println!("dice {mean:.4} ± {sd:.4} over {} cases", rows.len());
    }
    let mut m = run.manifest("evaluate")?;
    m.inputs = inputs;
    m.outputs.push(out.clone());
    m.write(&manifest_path_for(&out))?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random instances per op and precision [default: 20]
    #[arg(long)]
    pub instances: Option<usize>,
    /// Result table CSV [default: gradcheck.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gradcheck(g: &Global, a: &GradcheckArgs) -> Result<()> {
    let run = Run::start(g)?;
    let instances = run.r.get("instances", a.instances, DEFAULT_INSTANCES)?;
    let out = run.r.get("out", a.out.clone(), PathBuf::from("gradcheck.csv"))?;
    if instances == 0 {
        return Err(UsageError("--instances must be at least 1".into()).into());
    }
    let rows = run_gradient_suite(run.seed, instances).context("gradient suite")?;
    let mut csv = String::from("op,precision,instances,probes,max_rel_error,tolerance,worst_instance,passed\n");
    println!("{:<20} {:<5} {:>8} {:>14} {:>10}  result", "op", "prec", "probes", "max rel err", "tolerance");
    for r in &rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{:<20} {:<5} {:>8} {:>14.3e} {:>10.0e}  {verdict}",
            r.op, r.precision, r.probes, r.max_rel_error, r.tolerance
        );
        csv.push_str(&format!(
            "{},{},{},{},{:e},{:e},{},{}\n",
            r.op,
            r.precision,
            r.instances,
            r.probes,
            r.max_rel_error,
            r.tolerance,
            r.worst_instance,
            r.passed()
        ));
    }
    write_atomic(&out, csv.as_bytes())?;
    let mut m = run.manifest("gradcheck")?;
    m.outputs.push(out.clone());
    m.write(&manifest_path_for(&out))?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({})", r.op, r.precision))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed for {}", failed.join(", ")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Report CSV written by `evaluate`
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Summary JSON [default: <input>.summary.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn column(rows: &[&ReportRecord], f: impl Fn(&ReportRecord) -> Option<f64>) -> Vec<f64> {
    rows.iter().filter_map(|r| f(r)).collect()
}

pub fn report(g: &Global, a: &ReportArgs) -> Result<()> {
    let run = Run::start(g)?;
    let input: PathBuf = run.r.require("input", a.input.clone())?;
    let out = run.r.get("out", a.out.clone(), {
        let mut name = input.file_name().unwrap_or_default().to_os_string();
        name.push(".summary.json");
        input.with_file_name(name)
    })?;
    require_file(&input, "report")?;
    let text = std::fs::read_to_string(&input).input(format!("reading {}", input.display()))?;
    let records = parse_report(&text).input(format!("report {}", input.display()))?;

    type Getter = fn(&ReportRecord) -> Option<f64>;
    let metrics: [(&str, Getter); 4] = [
        ("dice", |r| Some(r.dice)),
        ("jaccard", |r| Some(r.jaccard)),
        ("diameter_abs_err_mm", |r| Some(r.diameter_abs_err_mm)),
        ("rel_vol_diff", |r| r.rel_vol_diff),
    ];
    let all: Vec<&ReportRecord> = records.iter().collect();
    let pre: Vec<&ReportRecord> = records.iter().filter(|r| r.stage == Stage::Pre).collect();
    let post: Vec<&ReportRecord> = records.iter().filter(|r| r.stage == Stage::Post).collect();
    let summary = |v: &[f64]| mean_std(v).map(|(m, s)| json!({"mean": m, "std": s, "n": v.len()}));

    let mut out_json = serde_json::Map::new();
    println!("{:<20} {:>20} {:>20} {:>20} {:>10}", "metric", "all", "pre", "post", "p (pre > post)");
    for (name, get) in metrics {
        let (va, vpre, vpost) = (column(&all, get), column(&pre, get), column(&post, get));
        let test = if vpre.is_empty() || vpost.is_empty() {
            None
        } else {
            Some(mann_whitney_u(&vpre, &vpost).context("Mann-Whitney test")?)
        };
        let cell = |v: &[f64]| mean_std(v).map_or("-".to_string(), |(m, s)| format!("{m:.4}±{s:.4}"));
        println!(
            "{name:<20} {:>20} {:>20} {:>20} {:>10}",
            cell(&va),
            cell(&vpre),
            cell(&vpost),
            test.as_ref().map_or("-".to_string(), |t| format!("{:.4}", t.p_value))
        );
        out_json.insert(
            name.to_string(),
            json!({
                "all": summary(&va),
                "pre": summary(&vpre),
                "post": summary(&vpost),
                "pre_vs_post": test.map(|t| json!({"u_pre": t.u_a, "u_post": t.u_b, "alternative": "pre > post", "p_value": t.p_value, "exact": t.exact})),
            }),
        );
    }
    write_atomic(&out, serde_json::to_string_pretty(&Value::Object(out_json))?.as_bytes())?;
    let mut m = run.manifest("report")?;
    m.inputs.push(input);
    m.outputs.push(out.clone());
    m.write(&manifest_path_for(&out))?;
    Ok(())
}
