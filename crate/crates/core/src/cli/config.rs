//! Line-oriented `key = value` run configuration.

use std::path::{Path, PathBuf};

use crate::data::{AugmentationSpec, SplitSpec, SyntheticSpec};
use crate::error::{config_err, Error, Result};
use crate::models::{preset, ModelConfig, Variant, PRESET_NAMES};
use crate::training::{OptimizerKind, TrainConfig};
use crate::transformer::Flavor;

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "seed",
    "workers",
    "out",
    "model.variant",
    "model.flavor",
    "model.layers",
    "model.heads",
    "model.dim",
    "model.mlp_dim",
    "model.dropout",
    "model.rotary",
    "model.input",
    "model.block_edge",
    "model.patch_edge",
    "model.classes",
    "optim.kind",
    "optim.lr",
    "optim.weight_decay",
    "optim.beta1",
    "optim.beta2",
    "optim.rho",
    "optim.eps",
    "train.epochs",
    "train.warmup_epochs",
    "train.steps_per_epoch",
    "train.floor_lr",
    "train.batch_size",
    "train.mixup_prob",
    "train.cutmix_prob",
    "train.mixup_alpha",
    "train.cutmix_alpha",
    "data.dir",
    "data.edge",
    "data.per_class",
    "data.signal",
    "data.noise",
    "aug.flip_x",
    "aug.flip_y",
    "aug.flip_z",
    "aug.rotation_deg",
    "aug.scale_min",
    "aug.scale_max",
    "aug.translation",
    "aug.noise_sigma",
    "aug.swap_edge",
    "aug.swap_count",
    "aug.factor",
    "split.train",
    "split.val",
    "split.test",
    "eval.threshold",
    "rollout.lo",
    "rollout.hi",
];

/// Keys a preset fixes.
fn preset_controlled(key: &str) -> bool {
    key.starts_with("model.") || key == "optim.lr" || key == "optim.weight_decay"
}

/// Raw `(key, value, line)` triples in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected `key = value`, got {:?}", i + 1, raw.trim()))?;
            let (k, v) = (k.trim(), v.trim());
            if k != "preset" && !KEYS.contains(&k) {
                return Err(config_err!("unknown config key `{k}` (line {})", i + 1));
            }
            if let Some((_, _, first)) = entries.iter().find(|e| e.0 == k) {
                return Err(config_err!("config key `{k}` set twice (lines {first} and {})", i + 1));
            }
            entries.push((k.to_string(), v.to_string(), i + 1));
        }
        Ok(ConfigFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub aug: AugmentationSpec,
    pub split: SplitSpec,
    pub threshold: f64,
    pub overlay: [f64; 2],
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            preset: None,
            seed: 0,
            workers: 1,
            out: None,
            model: preset("nit-desk").unwrap().model,
            train: TrainConfig::default(),
            data_dir: None,
            synthetic: SyntheticSpec::default(),
            aug: AugmentationSpec::default(),
            split: SplitSpec::default(),
            threshold: 0.5,
            overlay: [0.4, 0.8],
        };
        c.sync_seeds();
        c
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err!("`{key}`: cannot parse {v:?}"))
}

fn flavor_name(f: Flavor) -> &'static str {
    match f {
        Flavor::Vanilla => "vanilla",
        Flavor::Axile => "axile",
        Flavor::DotProduct => "dot_product",
        Flavor::PlaneAxis { .. } => "plane_axis",
    }
}

impl RunConfig {
    /// The single seed drives model init, data generation, splitting and training.
    fn sync_seeds(&mut self) {
        self.train.seed = self.seed;
        self.train.workers = self.workers;
        self.synthetic.seed = self.seed;
        self.split.seed = self.seed;
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        let p = preset(name)
            .ok_or_else(|| config_err!("unknown preset {name:?}; known presets: {}", PRESET_NAMES.join(", ")))?;
        self.model = p.model;
        self.train.optimizer.lr = p.lr;
        self.train.optimizer.weight_decay = p.weight_decay;
        self.preset = Some(name.to_string());
        Ok(())
    }

    /// Current value of `key` in its serialized form.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let e = &m.encoder;
        let t = &self.train;
        let s = &t.schedule;
        let a = &self.aug;
        Some(match key {
            "seed" => self.seed.to_string(),
            "workers" => self.workers.to_string(),
            "out" => self.out.as_ref()?.display().to_string(),
            "model.variant" => m.variant.name().into(),
            "model.flavor" => flavor_name(e.flavor).into(),
            "model.layers" => e.layers.to_string(),
            "model.heads" => e.heads.to_string(),
            "model.dim" => e.dim.to_string(),
            "model.mlp_dim" => e.mlp_dim.to_string(),
            "model.dropout" => e.dropout.to_string(),
            "model.rotary" => e.rotary.to_string(),
            "model.input" => {
                if m.input[0] == m.input[1] && m.input[1] == m.input[2] {
                    m.input[0].to_string()
                } else {
                    format!("{},{},{}", m.input[0], m.input[1], m.input[2])
                }
            }
            "model.block_edge" => m.block_edge.to_string(),
            "model.patch_edge" => m.patch_edge.map(|p| p.to_string()).unwrap_or_else(|| "none".into()),
            "model.classes" => m.classes.to_string(),
            "optim.kind" => t.optimizer.kind.name().into(),
            "optim.lr" => t.optimizer.lr.to_string(),
            "optim.weight_decay" => t.optimizer.weight_decay.to_string(),
            "optim.beta1" => t.optimizer.beta1.to_string(),
            "optim.beta2" => t.optimizer.beta2.to_string(),
            "optim.rho" => t.optimizer.rho.to_string(),
            "optim.eps" => t.optimizer.eps.to_string(),
            "train.epochs" => s.epochs.to_string(),
            "train.warmup_epochs" => s.warmup_epochs.to_string(),
            "train.steps_per_epoch" => s.steps_per_epoch.to_string(),
            "train.floor_lr" => s.floor.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.mixup_prob" => t.mixup_prob.to_string(),
            "train.cutmix_prob" => t.cutmix_prob.to_string(),
            "train.mixup_alpha" => t.mixup_alpha.to_string(),
            "train.cutmix_alpha" => t.cutmix_alpha.to_string(),
            "data.dir" => self.data_dir.as_ref()?.display().to_string(),
            "data.edge" => self.synthetic.edge.to_string(),
            "data.per_class" => self.synthetic.per_class.to_string(),
            "data.signal" => self.synthetic.signal.to_string(),
            "data.noise" => self.synthetic.noise.to_string(),
            "aug.flip_x" => a.flip_prob[0].to_string(),
            "aug.flip_y" => a.flip_prob[1].to_string(),
            "aug.flip_z" => a.flip_prob[2].to_string(),
            "aug.rotation_deg" => a.rotation_deg.to_string(),
            "aug.scale_min" => a.scale_range[0].to_string(),
            "aug.scale_max" => a.scale_range[1].to_string(),
            "aug.translation" => a.translation.to_string(),
            "aug.noise_sigma" => a.noise_sigma.to_string(),
            "aug.swap_edge" => a.swap_edge.to_string(),
            "aug.swap_count" => a.swap_count.to_string(),
            "aug.factor" => a.factor.to_string(),
            "split.train" => self.split.train.to_string(),
            "split.val" => self.split.val.to_string(),
            "split.test" => self.split.test.to_string(),
            "eval.threshold" => self.threshold.to_string(),
            "rollout.lo" => self.overlay[0].to_string(),
            "rollout.hi" => self.overlay[1].to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let a = &mut self.aug;
        match key {
            "seed" => self.seed = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "model.variant" => m.variant = Variant::parse(v)?,
            "model.flavor" => {
                m.encoder.flavor = match v {
                    "vanilla" => Flavor::Vanilla,
                    "axile" => Flavor::Axile,
                    "dot_product" => Flavor::DotProduct,
                    _ => return Err(config_err!("`{key}`: unknown flavor {v:?} (expected vanilla, axile or dot_product)")),
                }
            }
            "model.layers" => m.encoder.layers = num(key, v)?,
            "model.heads" => m.encoder.heads = num(key, v)?,
            "model.dim" => m.encoder.dim = num(key, v)?,
            "model.mlp_dim" => m.encoder.mlp_dim = num(key, v)?,
            "model.dropout" => m.encoder.dropout = num(key, v)?,
            "model.rotary" => m.encoder.rotary = num(key, v)?,
            "model.input" => {
                let parts = v.split(',').map(|p| num::<usize>(key, p.trim())).collect::<Result<Vec<_>>>()?;
                m.input = match parts[..] {
                    [e] => [e; 3],
                    [x, y, z] => [x, y, z],
                    _ => return Err(config_err!("`{key}`: expected one extent or three comma-separated extents")),
                }
            }
            "model.block_edge" => m.block_edge = num(key, v)?,
            "model.patch_edge" => m.patch_edge = if v == "none" { None } else { Some(num(key, v)?) },
            "model.classes" => m.classes = num(key, v)?,
            "optim.kind" => t.optimizer.kind = OptimizerKind::parse(v)?,
            "optim.lr" => t.optimizer.lr = num(key, v)?,
            "optim.weight_decay" => t.optimizer.weight_decay = num(key, v)?,
            "optim.beta1" => t.optimizer.beta1 = num(key, v)?,
            "optim.beta2" => t.optimizer.beta2 = num(key, v)?,
            "optim.rho" => t.optimizer.rho = num(key, v)?,
            "optim.eps" => t.optimizer.eps = num(key, v)?,
            "train.epochs" => t.schedule.epochs = num(key, v)?,
            "train.warmup_epochs" => t.schedule.warmup_epochs = num(key, v)?,
            "train.steps_per_epoch" => t.schedule.steps_per_epoch = num(key, v)?,
            "train.floor_lr" => t.schedule.floor = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.mixup_prob" => t.mixup_prob = num(key, v)?,
            "train.cutmix_prob" => t.cutmix_prob = num(key, v)?,
            "train.mixup_alpha" => t.mixup_alpha = num(key, v)?,
            "train.cutmix_alpha" => t.cutmix_alpha = num(key, v)?,
            "data.dir" => self.data_dir = Some(PathBuf::from(v)),
            "data.edge" => self.synthetic.edge = num(key, v)?,
            "data.per_class" => self.synthetic.per_class = num(key, v)?,
            "data.signal" => self.synthetic.signal = num(key, v)?,
            "data.noise" => self.synthetic.noise = num(key, v)?,
            "aug.flip_x" => a.flip_prob[0] = num(key, v)?,
            "aug.flip_y" => a.flip_prob[1] = num(key, v)?,
            "aug.flip_z" => a.flip_prob[2] = num(key, v)?,
            "aug.rotation_deg" => a.rotation_deg = num(key, v)?,
            "aug.scale_min" => a.scale_range[0] = num(key, v)?,
            "aug.scale_max" => a.scale_range[1] = num(key, v)?,
            "aug.translation" => a.translation = num(key, v)?,
            "aug.noise_sigma" => a.noise_sigma = num(key, v)?,
            "aug.swap_edge" => a.swap_edge = num(key, v)?,
            "aug.swap_count" => a.swap_count = num(key, v)?,
            "aug.factor" => a.factor = num(key, v)?,
            "split.train" => self.split.train = num(key, v)?,
            "split.val" => self.split.val = num(key, v)?,
            "split.test" => self.split.test = num(key, v)?,
            "eval.threshold" => self.threshold = num(key, v)?,
            "rollout.lo" => self.overlay[0] = num(key, v)?,
            "rollout.hi" => self.overlay[1] = num(key, v)?,
            _ => return Err(config_err!("unknown config key `{key}`")),
        }
        self.sync_seeds();
        Ok(())
    }

    /// Applies a parsed file and command-line overrides. Returns the config
    /// and any warnings about flags replacing file values.
    pub fn resolve(file: &ConfigFile, flags: &Overrides) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut cfg = RunConfig::default();
        let file_preset = file.get("preset");
        let preset_name = match (&flags.preset, file_preset) {
            (Some(f), Some(p)) if f != p => {
                warnings.push(format!("--preset {f} overrides preset = {p} from the config file"));
                Some(f.clone())
            }
            (Some(f), _) => Some(f.clone()),
            (None, p) => p.map(str::to_string),
        };
        if let Some(p) = &preset_name {
            cfg.apply_preset(p)?;
        }
        for (k, v, line) in &file.entries {
            if k == "preset" {
                continue;
            }
            if let (Some(p), true) = (&preset_name, preset_controlled(k)) {
                let mut probe = cfg.clone();
                probe.set(k, v)?;
                if probe.get(k) != cfg.get(k) {
                    return Err(config_err!(
                        "`{k} = {v}` (config file, line {line}) conflicts with preset {p} (`{k} = {}`)",
                        cfg.get(k).unwrap_or_default()
                    ));
                }
            }
            cfg.set(k, v)?;
        }
        let mut flag = |key: &str, val: Option<String>, cfg: &mut RunConfig| -> Result<()> {
            if let Some(val) = val {
                if let Some(old) = file.get(key) {
                    if old != val {
                        warnings.push(format!("--{key} {val} overrides {key} = {old} from the config file"));
                    }
                }
                cfg.set(key, &val)?;
            }
            Ok(())
        };
        flag("seed", flags.seed.map(|s| s.to_string()), &mut cfg)?;
        flag("out", flags.out.as_ref().map(|p| p.display().to_string()), &mut cfg)?;
        flag("workers", flags.workers.map(|w| w.to_string()), &mut cfg)?;
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Self::resolve(&ConfigFile::parse(text)?, &Overrides::default())?.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()?;
        self.split.validate()?;
        if self.workers == 0 {
            return Err(config_err!("workers must be at least 1"));
        }
        let [lo, hi] = self.overlay;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(config_err!("rollout thresholds need 0 ≤ lo < hi ≤ 1, got {lo} and {hi}"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.preset {
            s.push_str(&format!("preset = {p}\n"));
        }
        for k in KEYS {
            if let Some(v) = self.get(k) {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }
}
