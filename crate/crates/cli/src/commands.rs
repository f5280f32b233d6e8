use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use epm_core::image_io::{save_pgm, ManifestEntry};
use epm_core::pipeline::FeatureParams;
use epm_core::{
    average_precision, build_feature_tensor, codebook_from_images, fuse_scores, generate_synthetic, load_image,
    load_images, load_model, mean_ap, read_manifest, save_model, score_greedy, score_images, spm_feature, train_epm,
    train_linear, Codebook, DatasetManifest, FeatureTensor, RankedResults,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{RunConfig, UsageError};
use crate::linear::LinearModel;
use crate::visualize::visualize_selection;

fn load_codebook(cfg: &RunConfig) -> Result<Codebook> {
    Codebook::load(&cfg.codebook).with_context(|| format!("loading codebook {}", cfg.codebook.display()))
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn cache_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    let mut name = entry.path.as_os_str().to_owned();
    name.push(".eft");
    let rel = PathBuf::from(name);
    // Absolute entry paths are re-rooted under the cache directory.
    dir.join(rel.components().filter(|c| matches!(c, std::path::Component::Normal(_))).collect::<PathBuf>())
}

/// Tensors for a manifest, read from the cache when a matching one exists.
fn manifest_tensors(
    m: &DatasetManifest,
    codebook: &Codebook,
    params: &FeatureParams,
    expand_frac: f64,
    cache: Option<&Path>,
) -> Result<Vec<FeatureTensor>> {
    m.entries
        .par_iter()
        .map(|e| {
            if let Some(dir) = cache {
                if let Ok(t) = FeatureTensor::load(cache_path(dir, e)) {
                    if t.grid() == &params.grid && t.d() == codebook.len() {
                        return Ok(t);
                    }
                }
            }
            let img = m.load_entry(e, expand_frac).with_context(|| format!("loading {}", m.resolve(e).display()))?;
            Ok(build_feature_tensor(&img, codebook, &params.grid, params.step, &params.patch_sizes)?)
        })
        .collect()
}

fn single_tensor(
    path: &Path,
    codebook: &Codebook,
    params: &FeatureParams,
) -> Result<(epm_core::GrayImage, FeatureTensor)> {
    let img = load_image(path).with_context(|| format!("loading {}", path.display()))?;
    let t = build_feature_tensor(&img, codebook, &params.grid, params.step, &params.patch_sizes)?;
    Ok((img, t))
}

fn ap(scores: &[f64], m: &DatasetManifest) -> Result<f64> {
    Ok(average_precision(&RankedResults::new(scores, &m.labels())?)?)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let splits = generate_synthetic(&cfg.synth, &cfg.data_dir)?;
    println!(
        "wrote {} training and {} test images under {}",
        splits.train.entries.len(),
        splits.test.entries.len(),
        cfg.data_dir.display()
    );
    Ok(())
}

pub fn codebook(cfg: &RunConfig) -> Result<()> {
    let m = manifest(&cfg.train_manifest)?;
    let images = load_images(&m, cfg.expand_frac)?;
    let cb = codebook_from_images(&images, &cfg.features)?;
    cb.save(&cfg.codebook)?;
    info!("codebook of {} words written to {}", cb.len(), cfg.codebook.display());
    Ok(())
}

pub fn features(cfg: &RunConfig) -> Result<()> {
    let dir =
        cfg.features_dir.as_deref().ok_or_else(|| UsageError("`features` needs a non-empty features_dir".into()))?;
    let cb = load_codebook(cfg)?;
    let manifests: Vec<&PathBuf> = std::iter::once(&cfg.train_manifest).chain(&cfg.test_manifest).collect();
    for path in manifests {
        if !path.exists() {
            warn!("skipping missing manifest {}", path.display());
            continue;
        }
        let m = manifest(path)?;
        let tensors = manifest_tensors(&m, &cb, &cfg.features, cfg.expand_frac, None)?;
        m.entries.par_iter().zip(&tensors).try_for_each(|(e, t)| -> Result<()> {
            let out = cache_path(dir, e);
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            Ok(t.save(&out)?)
        })?;
        println!("{} tensors for {} cached in {}", tensors.len(), path.display(), dir.display());
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let m = manifest(&cfg.train_manifest)?;
    let cb = load_codebook(cfg)?;
    let tensors = manifest_tensors(&m, &cb, &cfg.features, cfg.expand_frac, cfg.features_dir.as_deref())?;
    let (model, log) = train_epm(&tensors, &m.labels(), cfg.train.clone())?;
    let model_path = cfg.model.first().ok_or_else(|| UsageError("no model path given".into()))?;
    save_model(&model, model_path)?;
    log.write_csv(&cfg.log)?;
    let last = log.records.last().expect("log has the initial row");
    println!(
        "{} parts, objective {:.6}, training AP {:.4}; model {} log {}",
        model.len(),
        last.objective,
        last.train_ap,
        model_path.display(),
        cfg.log.display()
    );
    Ok(())
}

fn write_or_print(out: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn score(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg.model.first().ok_or_else(|| UsageError("no model path given".into()))?;
    let model = load_model(model_path)?;
    let cb = load_codebook(cfg)?;
    let mut out = String::new();
    match (&cfg.image, &cfg.manifest) {
        (Some(image), _) => {
            let (_, t) = single_tensor(image, &cb, &cfg.features)?;
            let s = score_greedy(&model, &t, &[], false)?.score;
            writeln!(out, "{},{s:.16e}", image.display())?;
        }
        (None, Some(path)) => {
            let m = manifest(path)?;
            let tensors = manifest_tensors(&m, &cb, &cfg.features, cfg.expand_frac, cfg.features_dir.as_deref())?;
            out.push_str("image_path,score\n");
            for (e, s) in m.entries.iter().zip(score_images(&model, &tensors)?) {
                writeln!(out, "{},{s:.16e}", m.resolve(e).display())?;
            }
        }
        (None, None) => return Err(UsageError("`score` needs --image or --manifest".into()).into()),
    }
    write_or_print(&out, cfg.scores.as_deref())
}

fn spm_tensors(cfg: &RunConfig, m: &DatasetManifest, cb: &Codebook) -> Result<Vec<FeatureTensor>> {
    let params = cfg.spm_features()?;
    manifest_tensors(m, cb, &params, cfg.expand_frac, None)
}

fn spm_scores(cfg: &RunConfig, lin: &LinearModel, m: &DatasetManifest, cb: &Codebook) -> Result<Vec<f64>> {
    spm_tensors(cfg, m, cb)?.iter().map(|t| lin.score(t)).collect()
}

pub fn baseline(cfg: &RunConfig) -> Result<()> {
    let m = manifest(&cfg.train_manifest)?;
    let cb = load_codebook(cfg)?;
    let vectors =
        spm_tensors(cfg, &m, &cb)?.iter().map(|t| spm_feature(t, &cfg.spm_levels)).collect::<Result<Vec<_>, _>>()?;
    let weights = train_linear(&vectors, &m.labels(), &cfg.train)?;
    let lin = LinearModel { grid: cfg.spm_grid, levels: cfg.spm_levels.clone(), d: cb.len(), weights };
    let out = cfg.baseline_model.first().ok_or_else(|| UsageError("no baseline_model path given".into()))?;
    lin.save(out)?;
    info!("pyramid classifier written to {}", out.display());
    if let Some(test) = cfg.test_manifest.first().filter(|p| p.exists()) {
        let tm = manifest(test)?;
        println!("class,ap\n{},{:.6}", tm.class_name, ap(&spm_scores(cfg, &lin, &tm, &cb)?, &tm)?);
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let n = cfg.test_manifest.len();
    if n == 0 || cfg.model.len() != n {
        return Err(UsageError(format!(
            "`eval` needs one model per test manifest ({} models, {n} manifests)",
            cfg.model.len()
        ))
        .into());
    }
    if cfg.context && cfg.baseline_model.len() != n {
        return Err(UsageError("context fusion needs one baseline_model per test manifest".into()).into());
    }
    let cb = load_codebook(cfg)?;
    let mut report = String::from("class,ap\n");
    let mut aps = Vec::with_capacity(n);
    for (i, (test, model_path)) in cfg.test_manifest.iter().zip(&cfg.model).enumerate() {
        let m = manifest(test)?;
        let model = load_model(model_path)?;
        let tensors = manifest_tensors(&m, &cb, &cfg.features, cfg.expand_frac, cfg.features_dir.as_deref())?;
        let mut scores = score_images(&model, &tensors)?;
        if cfg.context {
            let lin = LinearModel::load(&cfg.baseline_model[i])?;
            let ctx = spm_scores(cfg, &lin, &m, &cb)?;
            ensure!(ctx.len() == scores.len());
            scores = scores.iter().zip(&ctx).map(|(&a, &b)| fuse_scores(a, b)).collect();
        }
        let class_ap = ap(&scores, &m)?;
        writeln!(report, "{},{class_ap:.6}", m.class_name)?;
        aps.push(class_ap);
    }
    writeln!(report, "mAP,{:.6}", mean_ap(&aps)?)?;
    fs::write(&cfg.report, &report).with_context(|| format!("writing {}", cfg.report.display()))?;
    print!("{report}");
    Ok(())
}

pub fn visualize(cfg: &RunConfig) -> Result<()> {
    let image = cfg.image.as_ref().ok_or_else(|| UsageError("`visualize` needs --image".into()))?;
    let model_path = cfg.model.first().ok_or_else(|| UsageError("no model path given".into()))?;
    let model = load_model(model_path)?;
    let cb = load_codebook(cfg)?;
    let (img, t) = single_tensor(image, &cb, &cfg.features)?;
    let sel = score_greedy(&model, &t, &[], false)?;
    save_pgm(&visualize_selection(&img, &sel, &model)?, &cfg.output)?;
    println!("{},{:.16e}", image.display(), sel.score);
    info!("{} parts drawn to {}", sel.len(), cfg.output.display());
    Ok(())
}
