use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::EngineError;
use crate::data::{AugmentationConfig, DatasetKind, DatasetSpec};
use crate::model::{ModelConfig, Variant};
use crate::optim::{LossConfig, SchedulePolicy, SchedulerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// DICE loss with a constant learning rate.
    Baseline,
    /// DICE 0.4 + CE 0.6 with an `exp_range` cyclic schedule.
    Enhanced,
    /// Anything else; no constraints beyond validity.
    Custom,
}

/// Training input extent: whole (padded) volumes or fixed-size patches.
/// Planar variants use a depth of 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchSize {
    Full,
    Size([usize; 3]),
}

impl Serialize for PatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PatchSize::Full => s.serialize_str("full"),
            PatchSize::Size(d) => d.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Word(String),
            Dims([usize; 3]),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) if w.eq_ignore_ascii_case("full") => Ok(PatchSize::Full),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected \"full\" or [d, h, w], got {w:?}"))),
            Repr::Dims(dims) => Ok(PatchSize::Size(dims)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            root: PathBuf::from("data/synthetic"),
            ratios: [0.7, 0.15, 0.15],
        }
    }
}

impl DatasetConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec::for_kind(self.kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_name: String,
    pub mode: RunMode,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub scheduler: SchedulerConfig,
    pub augmentation: AugmentationConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: PatchSize,
    /// Training samples drawn from each volume per epoch.
    pub samples_per_volume: usize,
    /// Chance that a patch is centred on a labelled voxel.
    pub foreground_prob: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::enhanced("enhanced", DatasetConfig::default())
    }
}

impl ExperimentConfig {
    fn base(run_name: &str, mode: RunMode, dataset: DatasetConfig, loss: LossConfig, scheduler: SchedulerConfig) -> Self {
        let classes = dataset.spec().num_classes();
        Self {
            run_name: run_name.to_string(),
            mode,
            dataset,
            model: ModelConfig::for_variant(Variant::Resunet3d, classes),
            loss,
            scheduler,
            augmentation: AugmentationConfig::default(),
            epochs: 300,
            batch_size: 2,
            patch_size: PatchSize::Size([64, 64, 64]),
            samples_per_volume: 1,
            foreground_prob: 0.67,
            seed: 2021,
        }
    }

    /// DICE loss, constant learning rate 0.001.
    pub fn baseline(run_name: &str, dataset: DatasetConfig) -> Self {
        Self::base(run_name, RunMode::Baseline, dataset, LossConfig::dice_only(), SchedulerConfig::constant(0.001))
    }

    /// DICE 0.4 + CE 0.6, `exp_range` between 0.001 and 0.006.
    pub fn enhanced(run_name: &str, dataset: DatasetConfig) -> Self {
        Self::base(
            run_name,
            RunMode::Enhanced,
            dataset,
            LossConfig::compound(),
            SchedulerConfig::cyclic(SchedulePolicy::ExpRange),
        )
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name.starts_with('.') {
            return bad(format!("run_name {:?} is not a plain directory name", self.run_name));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.scheduler.validate()?;
        self.augmentation.validate()?;
        match self.mode {
            RunMode::Baseline => {
                if self.loss.ce_weight != 0.0 || self.loss.dice_weight <= 0.0 {
                    return bad("baseline mode requires the DICE loss alone".into());
                }
                if self.scheduler.policy != SchedulePolicy::Constant {
                    return bad("baseline mode requires a constant learning rate".into());
                }
            }
            RunMode::Enhanced => {
                if (self.loss.dice_weight, self.loss.ce_weight) != (0.4, 0.6) {
                    return bad("enhanced mode requires DICE 0.4 + CE 0.6".into());
                }
                let s = &self.scheduler;
                if s.policy != SchedulePolicy::ExpRange || s.base_lr != 0.001 || s.max_lr != 0.006 {
                    return bad("enhanced mode requires exp_range between 0.001 and 0.006".into());
                }
            }
            RunMode::Custom => {}
        }
        let classes = self.dataset.spec().num_classes();
        if self.model.num_classes != classes {
            return bad(format!(
                "model has {} classes but dataset {} has {classes}",
                self.model.num_classes,
                self.dataset.kind.as_str()
            ));
        }
        if self.batch_size == 0 || self.samples_per_volume == 0 {
            return bad("batch_size and samples_per_volume must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.foreground_prob) {
            return bad("foreground_prob must lie in [0, 1]".into());
        }
        if let PatchSize::Size(p) = self.patch_size {
            let div = self.model.divisor();
            let planar = !self.model.variant.is_3d();
            if planar && p[0] != 1 {
                return bad(format!("planar variants need patch depth 1, got {p:?}"));
            }
            let checked = if planar { &p[1..] } else { &p[..] };
            if checked.iter().any(|&e| e == 0 || e % div != 0) {
                return bad(format!("patch size {p:?} must be divisible by {div}"));
            }
        }
        Ok(())
    }

    /// A missing `model.num_classes` is taken from the dataset kind.
    fn from_tree(tree: Value) -> Result<Self, EngineError> {
        let explicit = tree.pointer("/model/num_classes").is_some();
        let mut cfg: Self = serde_json::from_value(tree).map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        if !explicit {
            cfg.model.num_classes = cfg.dataset.spec().num_classes();
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        Self::from_tree(serde_json::from_str(text).map_err(|e| EngineError::InvalidConfig(e.to_string()))?)
    }

    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        Self::from_tree(toml::from_str(text).map_err(|e| EngineError::InvalidConfig(e.to_string()))?)
    }

    /// Reads `.json` or `.toml` by extension.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the field at dotted `path` (e.g. `loss.ce_weight`) from `raw`.
    /// The value is read as JSON when possible and as a string otherwise.
    /// Switching `dataset.kind` also resizes the model output to the new
    /// dataset's class count.
    pub fn apply_override(&mut self, path: &str, raw: &str) -> Result<(), EngineError> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut tree;
        for key in path.split('.') {
            slot = match slot {
                Value::Object(map) if map.contains_key(key) => map.get_mut(key).unwrap(),
                Value::Array(items) => match key.parse::<usize>().ok().and_then(|i| items.get_mut(i)) {
                    Some(v) => v,
                    None => return Err(EngineError::InvalidConfig(format!("no index {key} in override path {path}"))),
                },
                _ => return Err(EngineError::InvalidConfig(format!("unknown override path {path}"))),
            };
        }
        *slot = value;
        *self = serde_json::from_value(tree)
            .map_err(|e| EngineError::InvalidConfig(format!("override {path}={raw}: {e}")))?;
        if path == "dataset.kind" || path == "dataset" {
            self.model.num_classes = self.dataset.spec().num_classes();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let ds = DatasetConfig::default();
        ExperimentConfig::baseline("b", ds.clone()).validate().unwrap();
        ExperimentConfig::enhanced("e", ds).validate().unwrap();
    }

    #[test]
    fn mode_constraints_are_enforced() {
        let ds = DatasetConfig::default();
        let mut b = ExperimentConfig::baseline("b", ds.clone());
        b.loss = LossConfig::compound();
        assert!(b.validate().is_err());
        let mut b = ExperimentConfig::baseline("b", ds.clone());
        b.scheduler = SchedulerConfig::cyclic(SchedulePolicy::Triangular);
        assert!(b.validate().is_err());
        let mut e = ExperimentConfig::enhanced("e", ds.clone());
        e.loss = LossConfig::weighted(0.5, 0.5);
        assert!(e.validate().is_err());
        let mut e = ExperimentConfig::enhanced("e", ds);
        e.scheduler.max_lr = 0.01;
        assert!(e.validate().is_err());
        e.mode = RunMode::Custom;
        e.validate().unwrap();
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let mut c = ExperimentConfig::default();
        c.apply_override("loss.ce_weight", "0.8").unwrap();
        assert_eq!(c.loss.ce_weight, 0.8);
        c.apply_override("model.variant", "unet2d").unwrap();
        assert_eq!(c.model.variant, Variant::Unet2d);
        c.apply_override("patch_size", "full").unwrap();
        assert_eq!(c.patch_size, PatchSize::Full);
        c.apply_override("patch_size", "[1, 32, 32]").unwrap();
        assert_eq!(c.patch_size, PatchSize::Size([1, 32, 32]));
        c.apply_override("dataset.ratios.1", "0.2").unwrap();
        assert_eq!(c.dataset.ratios[1], 0.2);
        assert!(c.apply_override("loss.nope", "1").is_err());
        assert!(c.apply_override("epochs", "\"many\"").is_err());
        c.apply_override("dataset.kind", "pddca").unwrap();
        assert_eq!(c.model.num_classes, 7);
    }

    #[test]
    fn class_count_follows_the_dataset_unless_given() {
        let c = ExperimentConfig::from_toml("[dataset]\nkind = \"pddca\"\n").unwrap();
        assert_eq!(c.model.num_classes, 7);
        let c = ExperimentConfig::from_json(r#"{"dataset": {"kind": "nsclc"}, "model": {"num_classes": 9}}"#).unwrap();
        assert_eq!(c.model.num_classes, 9);
    }

    #[test]
    fn patch_divisibility() {
        let mut c = ExperimentConfig::default();
        c.model.depth = 3;
        c.patch_size = PatchSize::Size([32, 32, 20]);
        assert!(c.validate().is_err());
        c.model.variant = Variant::Unet2d;
        c.model.norm = crate::model::NormKind::Batch;
        c.patch_size = PatchSize::Size([1, 32, 32]);
        c.validate().unwrap();
    }

    #[test]
    fn serde_round_trip_and_toml() {
        let c = ExperimentConfig::baseline("x", DatasetConfig::default());
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let t = ExperimentConfig::from_toml("run_name = \"t\"\nepochs = 3\npatch_size = \"full\"\n").unwrap();
        assert_eq!((t.epochs, t.patch_size), (3, PatchSize::Full));
    }
}
