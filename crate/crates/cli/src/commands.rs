//! One function per subcommand. Every command prints its resolved settings
//! as `# key=value` lines before doing work, so a saved stdout is enough to
//! replay the run. File outputs created by a failing command are removed;
//! the one exception is a training halt on a non-finite loss, which keeps
//! the last good checkpoint and loss log on purpose.

use std::fs;
use std::path::{Path, PathBuf};

use demoire_core::freq::{decompose, recompose_fixed, resize_robustness_report};
use demoire_core::gradcheck::{block_suite, model_suite, op_suite, CheckReport};
use demoire_core::metrics::{psnr, ssim};
use demoire_core::model::{infer, LowMode, Model, ModelConfig};
use demoire_core::moire::{gen_moire_pair, synthetic_photo, MoireParams, SamplePair};
use demoire_core::train::{train_stage1, train_stage2, FeatureExtractor, LossRecord, Stage};
use demoire_core::{Error, Tensor};

use crate::config::{self, FullConfig};
use crate::png;
use crate::{io_err, usage, CliError};

/// Removes the files it tracks unless defused. Keeps failed runs from
/// leaving half-written outputs behind.
pub struct CleanupGuard {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl CleanupGuard {
    pub fn new() -> Self {
        Self {
            paths: Vec::new(),
            armed: true,
        }
    }

    pub fn track(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }

    pub fn defuse(&mut self) {
        self.armed = false;
    }
}

impl Default for CleanupGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for CleanupGuard {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn note(key: &str, value: impl std::fmt::Display) {
    println!("# {key}={value}");
}

/// --seed beats FQF_SEED beats the config file's seed.
pub fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("FQF_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("FQF_SEED: cannot parse {v:?} as a seed"))),
        Err(_) => Ok(config_seed),
    }
}

fn load_full_config(path: Option<&Path>) -> Result<FullConfig, CliError> {
    match path {
        None => Ok(FullConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            config::parse(&text)
        }
    }
}

fn clamp01(t: &Tensor<f32>) -> Result<Tensor<f32>, CliError> {
    let data: Vec<f32> = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::from_vec("clamp01", data, t.dims()).map_err(CliError::compute)
}

/// `{id}_moire.png` / `{id}_clean.png` pairs in a directory, sorted by id.
fn list_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name.strip_suffix("_moire.png") {
            let clean = dir.join(format!("{id}_clean.png"));
            if !clean.is_file() {
                return Err(usage(format!(
                    "{}: {name} has no matching {id}_clean.png",
                    dir.display()
                )));
            }
            out.push((id.to_string(), entry.path(), clean));
        }
    }
    if out.is_empty() {
        return Err(usage(format!(
            "{}: no *_moire.png / *_clean.png pairs found",
            dir.display()
        )));
    }
    out.sort();
    Ok(out)
}

fn load_dataset(dir: &Path) -> Result<Vec<SamplePair<f32>>, CliError> {
    list_pairs(dir)?
        .into_iter()
        .map(|(_, moire, clean)| {
            Ok(SamplePair {
                moire: png::load_png(&moire)?,
                clean: png::load_png(&clean)?,
                meta: None,
            })
        })
        .collect()
}

fn sorted_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.ends_with(".png") {
            out.push((name.to_string(), entry.path()));
        }
    }
    if out.is_empty() {
        return Err(usage(format!("{}: no .png files found", dir.display())));
    }
    out.sort();
    Ok(out)
}

pub fn cmd_decompose(
    input: &Path,
    levels: usize,
    out_low: &Path,
    out_high: &Path,
) -> Result<(), CliError> {
    note("input", input.display());
    note("levels", levels);
    note("out_low", out_low.display());
    note("out_high", out_high.display());
    let img = png::load_png(input)?;
    let (low, high) = decompose(&img, levels).map_err(CliError::compute)?;
    let mut guard = CleanupGuard::new();
    guard.track(out_low);
    guard.track(out_high);
    guard.track(&png::sidecar_path(out_high));
    png::save_png16(&low, out_low)?;
    png::save_high_component(&high, out_high, levels)?;
    guard.defuse();
    Ok(())
}

pub fn cmd_recompose(in_low: &Path, in_high: &Path, output: &Path) -> Result<(), CliError> {
    note("in_low", in_low.display());
    note("in_high", in_high.display());
    note("output", output.display());
    let low = png::load_png16(in_low)?;
    let (high, _levels) = png::load_high_component(in_high)?;
    let img = recompose_fixed(&low, &high).map_err(CliError::compute)?;
    let mut guard = CleanupGuard::new();
    guard.track(output);
    png::save_png(&img, output)?;
    guard.defuse();
    Ok(())
}

pub fn cmd_resize_report(data_dir: &Path, factor: f64, levels: usize) -> Result<(), CliError> {
    note("data_dir", data_dir.display());
    note("factor", factor);
    note("levels", levels);
    let files = sorted_pngs(data_dir)?;
    let (mut sum_low, mut sum_high) = (0.0f64, 0.0f64);
    for (name, path) in &files {
        let img = png::load_png(path)?;
        let r = resize_robustness_report(std::slice::from_ref(&img), factor, levels)
            .map_err(CliError::compute)?;
        sum_low += r.psnr_low;
        sum_high += r.psnr_high;
        println!("{name},{:.4},{:.4}", r.psnr_low, r.psnr_high);
    }
    let n = files.len() as f64;
    println!("mean,{:.4},{:.4}", sum_low / n, sum_high / n);
    Ok(())
}

pub fn cmd_gen_data(
    out_dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    clean_dir: Option<&Path>,
) -> Result<(), CliError> {
    note("out_dir", out_dir.display());
    note("count", count);
    note("size", size);
    note("seed", seed);
    if let Some(d) = clean_dir {
        note("clean_dir", d.display());
    }
    if count == 0 {
        return Err(usage("gen-data: --count must be >= 1"));
    }
    let sources: Option<Vec<(String, PathBuf)>> = match clean_dir {
        Some(dir) => {
            let files = sorted_pngs(dir)?;
            if files.len() < count {
                return Err(usage(format!(
                    "{}: {} clean images but --count {count}",
                    dir.display(),
                    files.len()
                )));
            }
            Some(files)
        }
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut guard = CleanupGuard::new();
    for i in 0..count {
        let clean: Tensor<f32> = match &sources {
            Some(files) => png::load_png(&files[i].1)?,
            None => synthetic_photo(seed + i as u64, size, size).map_err(CliError::compute)?,
        };
        let params = MoireParams::sample(seed + i as u64);
        let pair = gen_moire_pair(&clean, &params).map_err(CliError::compute)?;
        let moire_path = out_dir.join(format!("{i:03}_moire.png"));
        let clean_path = out_dir.join(format!("{i:03}_clean.png"));
        guard.track(&moire_path);
        guard.track(&clean_path);
        png::save_png(&pair.moire, &moire_path)?;
        png::save_png(&pair.clean, &clean_path)?;
    }
    guard.defuse();
    Ok(())
}

fn parse_stage(s: &str) -> Result<Stage, CliError> {
    match s {
        "high" => Ok(Stage::Stage1High),
        "low" => Ok(Stage::Stage1Low),
        "joint" => Ok(Stage::Stage2Joint),
        other => Err(usage(format!(
            "--stage: want high, low, or joint, got {other:?}"
        ))),
    }
}

fn load_model_from(path: &Path, cfg: ModelConfig) -> Result<Model<f32>, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Model::from_bytes(cfg, &bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    stage: &str,
    data_dir: &Path,
    config_path: Option<&Path>,
    out_ckpt: &Path,
    high_ckpt: Option<&Path>,
    low_ckpt: Option<&Path>,
    seed_flag: Option<u64>,
) -> Result<(), CliError> {
    let stage = parse_stage(stage)?;
    let mut cfg = load_full_config(config_path)?;
    cfg.train.stage = stage;
    cfg.train.seed = resolve_seed(seed_flag, cfg.train.seed)?;
    note("stage", match stage {
        Stage::Stage1High => "high",
        Stage::Stage1Low => "low",
        Stage::Stage2Joint => "joint",
    });
    note("data_dir", data_dir.display());
    note("out_ckpt", out_ckpt.display());
    for line in config::serialize(&cfg).lines() {
        println!("# {line}");
    }

    let mut model: Model<f32> = match stage {
        Stage::Stage2Joint => {
            let (Some(hp), Some(lp)) = (high_ckpt, low_ckpt) else {
                return Err(usage(
                    "--stage joint needs --high-ckpt and --low-ckpt from the stage-1 runs",
                ));
            };
            note("high_ckpt", hp.display());
            note("low_ckpt", lp.display());
            // Fresh fusion transform; branches arrive pretrained.
            let mut m = Model::init(cfg.model, cfg.train.seed).map_err(CliError::compute)?;
            m.high = load_model_from(hp, cfg.model)?.high;
            m.low = load_model_from(lp, cfg.model)?.low;
            m
        }
        _ => {
            if high_ckpt.is_some() || low_ckpt.is_some() {
                return Err(usage("--high-ckpt/--low-ckpt only apply to --stage joint"));
            }
            Model::init(cfg.model, cfg.train.seed).map_err(CliError::compute)?
        }
    };

    let data = load_dataset(data_dir)?;
    let extractor = FeatureExtractor::seeded(cfg.perceptual_seed).map_err(CliError::compute)?;
    let mut log: Vec<LossRecord> = Vec::new();
    let result = match stage {
        Stage::Stage2Joint => train_stage2(&mut model, &data, &cfg.train, &extractor, &mut log),
        _ => train_stage1(&mut model, &data, &cfg.train, &extractor, &mut log),
    };
    // A halt mid-run keeps the last good parameters and the finished log;
    // anything else (bad data, bad config) writes nothing.
    let halted = matches!(
        result,
        Err(Error::NanLoss { .. }) | Err(Error::NanGradient { .. }) | Err(Error::NonFinite { .. })
    );
    if result.is_ok() || halted {
        let cfg_path = sidecar(out_ckpt, "cfg");
        let log_path = sidecar(out_ckpt, "log");
        let mut guard = CleanupGuard::new();
        guard.track(out_ckpt);
        guard.track(&cfg_path);
        guard.track(&log_path);
        fs::write(out_ckpt, model.to_bytes()).map_err(|e| io_err(out_ckpt, e))?;
        fs::write(&cfg_path, config::serialize(&cfg)).map_err(|e| io_err(&cfg_path, e))?;
        let mut text = String::from("step,lr,l1,lp,total\n");
        for r in &log {
            text.push_str(&r.line());
            text.push('\n');
        }
        fs::write(&log_path, text).map_err(|e| io_err(&log_path, e))?;
        guard.defuse();
    }
    result.map_err(CliError::compute)
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// A checkpoint travels with its `.cfg` sidecar; that is where the model
/// shape comes from at load time.
fn load_checkpointed_model(ckpt: &Path) -> Result<(FullConfig, Model<f32>), CliError> {
    let cfg_path = sidecar(ckpt, "cfg");
    if !cfg_path.is_file() {
        return Err(usage(format!(
            "{}: missing config sidecar {} (written by train next to the checkpoint)",
            ckpt.display(),
            cfg_path.display()
        )));
    }
    let cfg = load_full_config(Some(&cfg_path))?;
    let model = load_model_from(ckpt, cfg.model)?;
    Ok((cfg, model))
}

fn parse_low_mode(s: &str, low_side: usize) -> Result<LowMode, CliError> {
    match s {
        "resize" => Ok(LowMode::Resize(low_side)),
        "full" => Ok(LowMode::Full),
        other => Err(usage(format!(
            "--low-mode: want resize or full, got {other:?}"
        ))),
    }
}

pub fn cmd_infer(
    ckpt: &Path,
    input: &Path,
    output: &Path,
    low_mode: &str,
) -> Result<(), CliError> {
    note("ckpt", ckpt.display());
    note("input", input.display());
    note("output", output.display());
    note("low_mode", low_mode);
    let (cfg, model) = load_checkpointed_model(ckpt)?;
    let mode = parse_low_mode(low_mode, cfg.model.low_side)?;
    let model = model.frozen().map_err(CliError::compute)?;
    let img = png::load_png(input)?;
    let out = infer(&img, &model, mode).map_err(CliError::compute)?;
    let mut guard = CleanupGuard::new();
    guard.track(output);
    png::save_png(&out, output)?;
    guard.defuse();
    Ok(())
}

pub fn cmd_eval(data_dir: &Path, ckpt: Option<&Path>) -> Result<(), CliError> {
    note("data_dir", data_dir.display());
    let loaded = match ckpt {
        Some(p) => {
            note("ckpt", p.display());
            let (cfg, model) = load_checkpointed_model(p)?;
            Some((cfg, model.frozen().map_err(CliError::compute)?))
        }
        None => {
            note("ckpt", "none (scoring the inputs as-is)");
            None
        }
    };
    let pairs = list_pairs(data_dir)?;
    let (mut sum_p, mut sum_s) = (0.0f64, 0.0f64);
    for (id, moire_path, clean_path) in &pairs {
        let moire = png::load_png(moire_path)?;
        let clean = png::load_png(clean_path)?;
        let restored = match &loaded {
            Some((cfg, model)) => {
                let out = infer(&moire, model, LowMode::Resize(cfg.model.low_side))
                    .map_err(CliError::compute)?;
                clamp01(&out)?
            }
            None => moire,
        };
        let p = psnr(&restored, &clean, 1.0).map_err(CliError::compute)?;
        let s = ssim(&restored, &clean).map_err(CliError::compute)?;
        sum_p += p;
        sum_s += s;
        println!("{id},{p:.4},{s:.4}");
    }
    let n = pairs.len() as f64;
    println!("mean,{:.4},{:.4}", sum_p / n, sum_s / n);
    Ok(())
}

pub fn cmd_gradcheck(module: &str) -> Result<(), CliError> {
    note("module", module);
    let mut reports: Vec<CheckReport> = Vec::new();
    let mut run = |suite: fn() -> demoire_core::Result<Vec<CheckReport>>| -> Result<(), CliError> {
        reports.extend(suite().map_err(CliError::compute)?);
        Ok(())
    };
    match module {
        "all" => {
            run(op_suite)?;
            run(block_suite)?;
            run(model_suite)?;
        }
        "tensor" => run(op_suite)?,
        "blocks" => run(block_suite)?,
        "model" => run(model_suite)?,
        other => {
            return Err(usage(format!(
                "--module: want all, tensor, blocks, or model, got {other:?}"
            )))
        }
    }
    let mut failed = 0usize;
    for r in &reports {
        println!("{r}");
        if !r.pass() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Compute(format!(
            "{failed} of {} gradient checks failed",
            reports.len()
        )));
    }
    Ok(())
}
