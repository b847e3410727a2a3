//! Plain `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; a repeated key takes its last
//! value, so command-line overrides can simply be appended. Unknown keys are
//! rejected. [`RunConfig::to_text`] echoes every resolved key, and feeding
//! that echo back reproduces the run.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | master seed |
//! | `total_iters` | 20000 | training iterations |
//! | `batch_size` | 128 | pairs per iteration |
//! | `lambda_fm` | 0.1 | weight of the flow-matching loss |
//! | `lr` | `0.0002 * batch/128` | Adam learning rate |
//! | `ema_decay` | 0.999 | EMA decay |
//! | `hidden` | `256,256,256` | hidden layer widths |
//! | `num_frequencies`, `freq_scale` | 6, 1 | time embedding |
//! | `eval_every`, `eval_samples` | 1000, 1000 | periodic evaluation |
//! | `checkpoint_every` | 0 (off) | checkpoint period |
//! | `dataset` | `eight_gaussians` | also `two_moons`, `checkerboard`, `gaussian`, `file` |
//! | `dataset_path` | | point file for `dataset = file` |
//! | `gaussian_mean`, `gaussian_var` | | comma lists for `dataset = gaussian` |
//! | `coupling` | `independent` | also `ot`, `supervised` |
//! | `ot_tau_rel` | 0.05 | Sinkhorn `tau / mean(C)` |
//! | `perturb_scale` | 0.05, 0 for masks | perturbation of `x_1` |
//! | `operator` | `identity` | also `mask`, `matrix` |
//! | `mask` | | 0-based masked coordinates |
//! | `operator_matrix` | | file with a square row-major matrix |
//! | `operator_noise` | 0 | noise added by `operator = matrix` |
//! | `n_start`, `doublings` | 4, 4 | grid sizes `n_start * 2^k`, `k < doublings` |
//! | `sigma_min`, `sigma_max`, `rho` | 0.002, 80 (500 supervised), 7 | EDM grid |
//! | `that_mode` | `unconditional` | or `i2i` |
//! | `guidance_method` | `gctm` | `dps`, `cm` or `gctm` |
//! | `guidance_lambda` | `adaptive` | `adaptive` or a fixed step |
//! | `guidance_lambda0` | 1 | scale of the adaptive step |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::couplings::{CorruptionOperator, CouplingKind, DEFAULT_PERTURB_SCALE, DEFAULT_TAU_REL};
use crate::error::{GctmError, Result};
use crate::harness::datasets::{parse_points, Dataset};
use crate::inference::{GuidanceMethod, Lambda, DEFAULT_LAMBDA0};
use crate::nn::TimeEmbedding;
use crate::schedule::{ScheduleParams, SUPERVISED_SIGMA_MAX};
use crate::trainer::TrainConfig;

const KEYS: &[&str] = &[
    "seed",
    "total_iters",
    "batch_size",
    "lambda_fm",
    "lr",
    "ema_decay",
    "hidden",
    "num_frequencies",
    "freq_scale",
    "eval_every",
    "eval_samples",
    "checkpoint_every",
    "dataset",
    "dataset_path",
    "gaussian_mean",
    "gaussian_var",
    "coupling",
    "ot_tau_rel",
    "perturb_scale",
    "operator",
    "mask",
    "operator_matrix",
    "operator_noise",
    "n_start",
    "doublings",
    "sigma_min",
    "sigma_max",
    "rho",
    "that_mode",
    "guidance_method",
    "guidance_lambda",
    "guidance_lambda0",
];

/// Parses `key = value` lines into a map, checking keys against the schema.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let map = parse_pairs(text)?;
    if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(GctmError::Parse(format!("unknown key '{k}'")));
    }
    Ok(map)
}

/// `key = value` lines with `#` comments, without checking key names.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            GctmError::Parse(format!("line {}: expected key=value, got '{line}'", no + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| GctmError::Parse(format!("{key} = '{v}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Named(String),
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    Identity,
    Mask(Vec<usize>),
    Matrix { path: PathBuf, noise: f64 },
}

/// A fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub operator: OperatorSpec,
    pub guidance_method: GuidanceMethod,
    pub guidance_lambda: Lambda,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            dataset: DatasetSpec::Named("eight_gaussians".into()),
            operator: OperatorSpec::Identity,
            guidance_method: GuidanceMethod::Gctm,
            guidance_lambda: Lambda::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let mut cfg = RunConfig::default();
        let t = &mut cfg.train;
        if let Some(v) = get("seed") {
            t.seed = parse("seed", v)?;
        }
        if let Some(v) = get("total_iters") {
            t.total_iters = parse("total_iters", v)?;
        }
        if let Some(v) = get("batch_size") {
            t.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = get("lambda_fm") {
            t.lambda_fm = parse("lambda_fm", v)?;
        }
        if let Some(v) = get("lr") {
            t.lr = Some(parse("lr", v)?);
        }
        if let Some(v) = get("ema_decay") {
            t.ema_decay = parse("ema_decay", v)?;
        }
        if let Some(v) = get("hidden") {
            t.hidden = parse_list("hidden", v)?;
        }
        let mut emb = TimeEmbedding::default();
        if let Some(v) = get("num_frequencies") {
            emb.num_frequencies = parse("num_frequencies", v)?;
        }
        if let Some(v) = get("freq_scale") {
            emb.scale = parse("freq_scale", v)?;
        }
        t.embedding = emb;
        if let Some(v) = get("eval_every") {
            t.eval_every = parse("eval_every", v)?;
        }
        if let Some(v) = get("eval_samples") {
            t.eval_samples = parse("eval_samples", v)?;
        }
        if let Some(v) = get("checkpoint_every") {
            t.checkpoint_every = parse("checkpoint_every", v)?;
        }
        if let Some(v) = get("n_start") {
            t.n_start = parse("n_start", v)?;
        }
        if let Some(v) = get("doublings") {
            t.doublings = parse("doublings", v)?;
        }
        if let Some(v) = get("that_mode") {
            t.that_mode = parse("that_mode", v)?;
        }

        cfg.operator = match get("operator").unwrap_or("identity") {
            "identity" => OperatorSpec::Identity,
            "mask" => OperatorSpec::Mask(parse_list("mask", get("mask").unwrap_or(""))?),
            "matrix" => OperatorSpec::Matrix {
                path: get("operator_matrix")
                    .ok_or_else(|| {
                        GctmError::Parse("operator = matrix needs operator_matrix".into())
                    })?
                    .into(),
                noise: get("operator_noise")
                    .map(|v| parse("operator_noise", v))
                    .transpose()?
                    .unwrap_or(0.0),
            },
            other => return Err(GctmError::Parse(format!("unknown operator '{other}'"))),
        };
        let coupling = get("coupling").unwrap_or("independent");
        t.coupling = match coupling {
            "independent" => CouplingKind::Independent,
            "ot" => CouplingKind::Ot {
                tau_rel: get("ot_tau_rel")
                    .map(|v| parse("ot_tau_rel", v))
                    .transpose()?
                    .unwrap_or(DEFAULT_TAU_REL),
            },
            "supervised" => CouplingKind::Supervised {
                op: cfg.operator.load()?,
            },
            other => return Err(GctmError::Parse(format!("unknown coupling '{other}'"))),
        };
        let masked = matches!(&t.coupling, CouplingKind::Supervised { op } if op.is_mask());
        t.perturb_scale = match get("perturb_scale") {
            Some(v) => parse("perturb_scale", v)?,
            None if masked => 0.0,
            None => DEFAULT_PERTURB_SCALE,
        };
        let mut sched = ScheduleParams::default();
        if coupling == "supervised" {
            sched.sigma_max = SUPERVISED_SIGMA_MAX;
        }
        if let Some(v) = get("sigma_min") {
            sched.sigma_min = parse("sigma_min", v)?;
        }
        if let Some(v) = get("sigma_max") {
            sched.sigma_max = parse("sigma_max", v)?;
        }
        if let Some(v) = get("rho") {
            sched.rho = parse("rho", v)?;
        }
        t.schedule = sched;

        cfg.dataset = match get("dataset").unwrap_or("eight_gaussians") {
            name @ ("eight_gaussians" | "two_moons" | "checkerboard") => {
                DatasetSpec::Named(name.into())
            }
            "gaussian" => DatasetSpec::Gaussian {
                mean: parse_list("gaussian_mean", get("gaussian_mean").unwrap_or(""))?,
                var: parse_list("gaussian_var", get("gaussian_var").unwrap_or(""))?,
            },
            "file" => DatasetSpec::File(
                get("dataset_path")
                    .ok_or_else(|| GctmError::Parse("dataset = file needs dataset_path".into()))?
                    .into(),
            ),
            other => return Err(GctmError::Parse(format!("unknown dataset '{other}'"))),
        };
        if let Some(v) = get("guidance_method") {
            cfg.guidance_method = parse("guidance_method", v)?;
        }
        let lambda0 = get("guidance_lambda0")
            .map(|v| parse("guidance_lambda0", v))
            .transpose()?
            .unwrap_or(DEFAULT_LAMBDA0);
        cfg.guidance_lambda = match get("guidance_lambda").unwrap_or("adaptive") {
            "adaptive" => Lambda::Adaptive(lambda0),
            v => Lambda::Fixed(parse("guidance_lambda", v)?),
        };
        Ok(cfg)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Named(n) => match n.as_str() {
                "eight_gaussians" => Ok(Dataset::EightGaussians),
                "two_moons" => Ok(Dataset::TwoMoons),
                "checkerboard" => Ok(Dataset::Checkerboard),
                other => Err(GctmError::Parse(format!("unknown dataset '{other}'"))),
            },
            DatasetSpec::Gaussian { mean, var } => Dataset::gaussian(mean.clone(), var.clone()),
            DatasetSpec::File(p) => Dataset::from_file(p),
        }
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", t.seed.to_string());
        kv("total_iters", t.total_iters.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lambda_fm", t.lambda_fm.to_string());
        if let Some(lr) = t.lr {
            kv("lr", lr.to_string());
        }
        kv("ema_decay", t.ema_decay.to_string());
        kv("hidden", join(&t.hidden));
        kv("num_frequencies", t.embedding.num_frequencies.to_string());
        kv("freq_scale", t.embedding.scale.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv("eval_samples", t.eval_samples.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        match &self.dataset {
            DatasetSpec::Named(n) => kv("dataset", n.clone()),
            DatasetSpec::Gaussian { mean, var } => {
                kv("dataset", "gaussian".into());
                kv("gaussian_mean", join(mean));
                kv("gaussian_var", join(var));
            }
            DatasetSpec::File(p) => {
                kv("dataset", "file".into());
                kv("dataset_path", p.display().to_string());
            }
        }
        kv("coupling", t.coupling.name().into());
        if let CouplingKind::Ot { tau_rel } = t.coupling {
            kv("ot_tau_rel", tau_rel.to_string());
        }
        kv("perturb_scale", t.perturb_scale.to_string());
        match &self.operator {
            OperatorSpec::Identity => kv("operator", "identity".into()),
            OperatorSpec::Mask(idx) => {
                kv("operator", "mask".into());
                kv("mask", join(idx));
            }
            OperatorSpec::Matrix { path, noise } => {
                kv("operator", "matrix".into());
                kv("operator_matrix", path.display().to_string());
                kv("operator_noise", noise.to_string());
            }
        }
        kv("n_start", t.n_start.to_string());
        kv("doublings", t.doublings.to_string());
        kv("sigma_min", t.schedule.sigma_min.to_string());
        kv("sigma_max", t.schedule.sigma_max.to_string());
        kv("rho", t.schedule.rho.to_string());
        kv("that_mode", t.that_mode.to_string());
        let method = match self.guidance_method {
            GuidanceMethod::Dps => "dps",
            GuidanceMethod::Cm => "cm",
            GuidanceMethod::Gctm => "gctm",
        };
        kv("guidance_method", method.into());
        match self.guidance_lambda {
            Lambda::Adaptive(l0) => {
                kv("guidance_lambda", "adaptive".into());
                kv("guidance_lambda0", l0.to_string());
            }
            Lambda::Fixed(l) => kv("guidance_lambda", l.to_string()),
        }
        s
    }
}

impl OperatorSpec {
    pub fn load(&self) -> Result<CorruptionOperator> {
        Ok(match self {
            OperatorSpec::Identity => CorruptionOperator::Identity,
            OperatorSpec::Mask(idx) => CorruptionOperator::CoordinateMask(idx.clone()),
            OperatorSpec::Matrix { path, noise } => {
                let m = parse_points(&fs::read_to_string(path)?)?;
                if m.len() != m.dim() {
                    return Err(GctmError::shape(format!(
                        "{}: operator matrix must be square",
                        path.display()
                    )));
                }
                CorruptionOperator::Linear {
                    dim: m.dim(),
                    matrix: m.into_vec(),
                    noise: *noise,
                }
            }
        })
    }
}

/// The config echo followed by provenance comments.
pub fn manifest(cfg: &RunConfig, git_describe: &str, command: &str) -> String {
    format!(
        "# command: {command}\n# git: {git_describe}\n# seed: {}\n{}",
        cfg.train.seed,
        cfg.to_text()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parses_a_full_file() {
        let text = "# comment\nseed = 7\ncoupling = ot\not_tau_rel = 0.1\nhidden = 64, 64\nn_start=4\ndoublings=1\n\
                    dataset = gaussian\ngaussian_mean = 1,-0.5\ngaussian_var = 0.25,0.5\nguidance_lambda = 0.5\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.coupling, CouplingKind::Ot { tau_rel: 0.1 });
        assert_eq!(cfg.train.hidden, vec![64, 64]);
        assert_eq!(cfg.guidance_lambda, Lambda::Fixed(0.5));
        assert_eq!(cfg.load_dataset().unwrap().name(), "gaussian");
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn supervised_defaults() {
        let cfg =
            RunConfig::from_text("coupling = supervised\noperator = mask\nmask = 1\n").unwrap();
        assert_eq!(cfg.train.schedule.sigma_max, 500.0);
        assert_eq!(cfg.train.perturb_scale, 0.0);
        let cfg = RunConfig::from_text("coupling = supervised\n").unwrap();
        assert_eq!(cfg.train.perturb_scale, 0.05);
    }

    #[test]
    fn later_keys_override_and_unknown_keys_fail() {
        let cfg = RunConfig::from_text("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.train.seed, 2);
        assert!(RunConfig::from_text("bogus = 1\n").is_err());
        assert!(RunConfig::from_text("seed\n").is_err());
        assert!(RunConfig::from_text("seed = x\n").is_err());
    }

    #[test]
    fn manifest_reparses() {
        let cfg = RunConfig::from_text("seed = 3\n").unwrap();
        let m = manifest(&cfg, "abc123", "train");
        assert!(m.contains("# git: abc123"));
        assert_eq!(RunConfig::from_text(&m).unwrap(), cfg);
    }
}
