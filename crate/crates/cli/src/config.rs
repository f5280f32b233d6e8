//! Flat `key = value` run configuration.
//!
//! Every key has a default in [`KEYS`]. A config file may set any subset of
//! keys; `--key value` flags on the command line override the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use epm_core::pipeline::FeatureParams;
use epm_core::{Grid, SynthConfig, TrainConfig};

/// Malformed invocation or configuration. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

/// `(key, default, description)` for every configuration key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data_dir", "data", "output directory of `synth`"),
    ("train_manifest", "data/train.txt", "training manifest"),
    ("test_manifest", "data/test.txt", "test manifest(s), comma separated"),
    ("manifest", "", "manifest to score with `score` (instead of --image)"),
    ("image", "", "single image for `score` and `visualize`"),
    ("codebook", "codebook.txt", "codebook file"),
    ("features_dir", "features", "feature tensor cache directory; empty disables it"),
    ("model", "model.epm", "part model file(s), comma separated for `eval`"),
    ("log", "train_log.csv", "training log written by `train`"),
    ("report", "report.csv", "AP report written by `eval`"),
    ("scores", "", "score CSV written by `score`; empty prints to stdout"),
    ("output", "composite.pgm", "composite image written by `visualize`"),
    ("baseline_model", "baseline.lin", "linear pyramid classifier file(s), comma separated"),
    ("context", "false", "add the pyramid classifier score during `eval`"),
    ("expand_frac", "0", "box expansion when cropping boxed manifest entries"),
    ("grid", "17", "lattice points per axis, `S` or `SxT`"),
    ("step", "4", "descriptor lattice step in pixels"),
    ("patch_sizes", "8,16", "descriptor patch sizes in pixels"),
    ("codebook_size", "64", "visual words"),
    ("codebook_samples", "20000", "descriptors sampled to fit the codebook"),
    ("kmeans_iters", "30", "Lloyd iterations"),
    ("spm_levels", "1,2,3,4", "pyramid levels of the linear classifier"),
    ("spm_grid", "13", "lattice points per axis for the pyramid classifier"),
    ("eta0", "0.05", "base learning rate"),
    ("lambda", "1e-5", "regularization constant"),
    ("k", "100", "parts used per image"),
    ("n", "200", "candidate parts per positive training image"),
    ("beta", "0.3333333333333333", "maximum IoU between parts scoring one image"),
    ("outer_iters", "10", "outer iterations"),
    ("passes_per_iter", "5", "passes over the data per outer iteration"),
    ("anneal_at", "5", "outer iteration after which the rate is annealed"),
    ("anneal_factor", "5", "rate annealing divisor"),
    ("seed", "0", "seed for codebook sampling and training"),
    ("unique_sources", "true", "forbid two training-time parts from one source image"),
    ("min_cells", "2", "minimum candidate span in grid cells"),
    ("synth_image_size", "96", "synthetic image side in pixels"),
    ("synth_num_train", "100", "synthetic training images per class"),
    ("synth_num_test", "100", "synthetic test images per class"),
    ("synth_patch_size", "16", "synthetic texture patch side in pixels"),
    ("synth_jitter", "2", "synthetic signal jitter in pixels"),
    ("synth_noise", "0.1", "synthetic pixel noise amplitude"),
    ("synth_distractors", "2", "synthetic distractor patches per image"),
    ("synth_seed", "0", "synthetic data seed"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub codebook: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub model: Vec<PathBuf>,
    pub log: PathBuf,
    pub report: PathBuf,
    pub scores: Option<PathBuf>,
    pub output: PathBuf,
    pub baseline_model: Vec<PathBuf>,
    pub context: bool,
    pub expand_frac: f64,
    pub spm_levels: Vec<usize>,
    pub spm_grid: usize,
    pub features: FeatureParams,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            data_dir: PathBuf::new(),
            train_manifest: PathBuf::new(),
            test_manifest: Vec::new(),
            manifest: None,
            image: None,
            codebook: PathBuf::new(),
            features_dir: None,
            model: Vec::new(),
            log: PathBuf::new(),
            report: PathBuf::new(),
            scores: None,
            output: PathBuf::new(),
            baseline_model: Vec::new(),
            context: false,
            expand_frac: 0.0,
            spm_levels: Vec::new(),
            spm_grid: 0,
            features: FeatureParams::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("built-in defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value.trim().parse().or_else(|_| usage(format!("invalid value {value:?} for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, UsageError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => usage(format!("invalid value {value:?} for key `{key}` (expected true or false)")),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, UsageError> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_list(value: &str) -> Vec<PathBuf> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

fn parse_grid(key: &str, value: &str) -> Result<Grid, UsageError> {
    let v = value.trim();
    let (s, t) = match v.split_once(['x', 'X']) {
        Some((s, t)) => (parse(key, s)?, parse(key, t)?),
        None => {
            let s = parse(key, v)?;
            (s, s)
        }
    };
    Grid::new(s, t).or_else(|e| usage(format!("invalid value {value:?} for key `{key}`: {e}")))
}

impl RunConfig {
    /// Sets one key. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let key = key.replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "data_dir" => self.data_dir = v.into(),
            "train_manifest" => self.train_manifest = v.into(),
            "test_manifest" => self.test_manifest = path_list(v),
            "manifest" => self.manifest = optional_path(v),
            "image" => self.image = optional_path(v),
            "codebook" => self.codebook = v.into(),
            "features_dir" => self.features_dir = optional_path(v),
            "model" => self.model = path_list(v),
            "log" => self.log = v.into(),
            "report" => self.report = v.into(),
            "scores" => self.scores = optional_path(v),
            "output" => self.output = v.into(),
            "baseline_model" => self.baseline_model = path_list(v),
            "context" => self.context = parse_bool(k, v)?,
            "expand_frac" => self.expand_frac = parse(k, v)?,
            "grid" => self.features.grid = parse_grid(k, v)?,
            "step" => self.features.step = parse(k, v)?,
            "patch_sizes" => self.features.patch_sizes = parse_list(k, v)?,
            "codebook_size" => self.features.codebook_size = parse(k, v)?,
            "codebook_samples" => self.features.codebook_samples = parse(k, v)?,
            "kmeans_iters" => self.features.kmeans_iters = parse(k, v)?,
            "spm_levels" => self.spm_levels = parse_list(k, v)?,
            "spm_grid" => self.spm_grid = parse(k, v)?,
            "eta0" => self.train.eta0 = parse(k, v)?,
            "lambda" => self.train.lambda = parse(k, v)?,
            "k" => self.train.k = parse(k, v)?,
            "n" => self.train.n = parse(k, v)?,
            "beta" => self.train.beta = parse(k, v)?,
            "outer_iters" => self.train.outer_iters = parse(k, v)?,
            "passes_per_iter" => self.train.passes_per_iter = parse(k, v)?,
            "anneal_at" => self.train.anneal_at = parse(k, v)?,
            "anneal_factor" => self.train.anneal_factor = parse(k, v)?,
            "seed" => {
                self.train.seed = parse(k, v)?;
                self.features.seed = self.train.seed;
            }
            "unique_sources" => self.train.unique_sources = parse_bool(k, v)?,
            "min_cells" => self.train.min_cells = parse(k, v)?,
            "synth_image_size" => self.synth.image_size = parse(k, v)?,
            "synth_num_train" => self.synth.num_train = parse(k, v)?,
            "synth_num_test" => self.synth.num_test = parse(k, v)?,
            "synth_patch_size" => self.synth.signal_patch_size = parse(k, v)?,
            "synth_jitter" => self.synth.signal_jitter = parse(k, v)?,
            "synth_noise" => self.synth.noise_level = parse(k, v)?,
            "synth_distractors" => self.synth.distractor_count = parse(k, v)?,
            "synth_seed" => self.synth.seed = parse(k, v)?,
            _ => return usage(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    /// Applies a config file's `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return usage(format!("{origin}:{}: expected `key = value`, found {raw:?}", no + 1));
            };
            self.set(key.trim(), value).map_err(|e| UsageError(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text =
            fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then `--config` (wherever it appears), then the other
    /// `--key value` flags in order.
    pub fn from_args(args: &[String]) -> Result<Self, UsageError> {
        let mut pairs = Vec::new();
        let mut config_file = None;
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let Some(key) = flag.strip_prefix("--") else {
                return usage(format!("unexpected argument {flag:?}; options are `--key value`"));
            };
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| UsageError(format!("missing value for --{key}")))?;
                    (key.to_string(), v.clone())
                }
            };
            if key == "config" {
                config_file = Some(PathBuf::from(value));
            } else {
                pairs.push((key, value));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(path) = config_file {
            cfg.apply_file(&path)?;
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Feature settings for the pyramid classifier's own grid.
    pub fn spm_features(&self) -> Result<FeatureParams, UsageError> {
        let grid = Grid::new(self.spm_grid, self.spm_grid)
            .map_err(|e| UsageError(format!("invalid spm_grid {}: {e}", self.spm_grid)))?;
        Ok(FeatureParams { grid, ..self.features.clone() })
    }
}

/// Every key with its default, one per line, for `epm help`.
pub fn describe_keys() -> String {
    KEYS.iter().map(|(k, d, h)| format!("  {k:<18} = {d:<20} {h}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_follow_the_table() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train, TrainConfig::default());
        let t = &cfg.train;
        assert_eq!((t.lambda, t.beta, t.k, t.n), (1e-5, 1.0 / 3.0, 100, 200));
        assert_eq!((t.outer_iters, t.passes_per_iter, t.anneal_at, t.anneal_factor), (10, 5, 5, 5.0));
        assert_eq!(cfg.features.grid, Grid::default());
        assert_eq!(cfg.spm_levels, vec![1, 2, 3, 4]);
        assert_eq!(cfg.spm_grid, 13);
        assert_eq!(cfg.synth, SynthConfig::default());
        assert_eq!(cfg.features, FeatureParams::default());
        assert!(cfg.image.is_none() && cfg.scores.is_none());
    }

    #[test]
    fn every_key_is_settable_and_unknown_keys_fail() {
        let mut cfg = RunConfig::default();
        for (k, d, _) in KEYS {
            cfg.set(k, d).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.set("frobnicate", "1").is_err());
        assert!(cfg.set("k", "many").is_err());
        assert!(cfg.set("grid", "1").is_err());
    }

    #[test]
    fn config_text_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nk = 7\nn=3 # trailing\npatch_sizes = 8, 12\ngrid = 9x5\n").unwrap();
        let cfg = RunConfig::from_args(&args(&["--n", "4", "--config", path.to_str().unwrap(), "--seed=9"])).unwrap();
        assert_eq!((cfg.train.k, cfg.train.n, cfg.train.seed, cfg.features.seed), (7, 4, 9, 9));
        assert_eq!(cfg.features.patch_sizes, vec![8, 12]);
        assert_eq!((cfg.features.grid.s(), cfg.features.grid.t()), (9, 5));
    }

    #[test]
    fn malformed_inputs_are_usage_errors() {
        assert!(RunConfig::from_args(&args(&["--k"])).is_err());
        assert!(RunConfig::from_args(&args(&["stray"])).is_err());
        assert!(RunConfig::from_args(&args(&["--config", "/nonexistent/run.cfg"])).is_err());
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("k = 3\nnot a pair\n", "x.cfg").unwrap_err();
        assert!(err.0.starts_with("x.cfg:2:"));
        assert!(cfg.apply_text("bogus = 1\n", "x.cfg").is_err());
    }

    #[test]
    fn dashed_flags_and_lists() {
        let cfg = RunConfig::from_args(&args(&[
            "--train-manifest",
            "a.txt",
            "--model",
            "m1.epm, m2.epm",
            "--context",
            "yes",
        ]))
        .unwrap();
        assert_eq!(cfg.train_manifest, PathBuf::from("a.txt"));
        assert_eq!(cfg.model, vec![PathBuf::from("m1.epm"), PathBuf::from("m2.epm")]);
        assert!(cfg.context);
    }
}
