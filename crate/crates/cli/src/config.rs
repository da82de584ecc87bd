//! Experiment configuration: one JSON document with a section per stage.
//! Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::PathBuf;

use diffaudit::data::toy::{PlantKind, ToyConfig};
use diffaudit::defenses::{CanaryAuditConfig, ExtractionRunConfig};
use diffaudit::diffusion::sample::SamplerOptions;
use diffaudit::diffusion::train::TrainingConfig;
use diffaudit::diffusion::{Arch, Conditioning, ScheduleParams};
use diffaudit::extraction::ScanConfig;
use diffaudit::image::Shape;
use diffaudit::inpainting::InpaintAttackConfig;
use diffaudit::membership::{LossConfig, ShadowConfig, VarianceMode};
use diffaudit::seed::derive_named;
use diffaudit::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Toy {
        #[serde(default)]
        toy: ToyConfig,
        /// Copy counts of planted duplicates (empty for a plain toy set).
        #[serde(default)]
        planted: Vec<usize>,
        #[serde(default = "noise_plants")]
        plant_kind: PlantKind,
    },
    Cifar10 {
        paths: Vec<PathBuf>,
    },
    Raw {
        tensor: PathBuf,
        manifest: PathBuf,
    },
}

fn noise_plants() -> PlantKind {
    PlantKind::Noise
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Toy {
            toy: ToyConfig::default(),
            planted: vec![],
            plant_kind: PlantKind::Noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Condition on class labels (the dataset must be labelled).
    pub conditional: bool,
    pub data_std: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Arch::desk(Shape::new(1, 1, 1), Conditioning::Unconditional);
        ModelConfig {
            hidden: a.hidden,
            time_dim: a.time_dim,
            conditional: false,
            data_std: a.data_std,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, input: Shape, classes: Option<u32>) -> Result<Arch> {
        let conditioning = match (self.conditional, classes) {
            (false, _) => Conditioning::Unconditional,
            (true, Some(classes)) => Conditioning::ClassConditional { classes },
            (true, None) => {
                return Err(Error::Config(
                    "a conditional model needs a labelled dataset".into(),
                ))
            }
        };
        let arch = Arch {
            input,
            hidden: self.hidden.clone(),
            time_dim: self.time_dim,
            conditioning,
            data_std: self.data_std,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateStage {
    pub count: usize,
    pub label: Option<u32>,
    pub sampler: SamplerOptions,
    pub seed: u64,
}

impl Default for GenerateStage {
    fn default() -> Self {
        GenerateStage {
            count: 64,
            label: None,
            sampler: SamplerOptions::default(),
            seed: 0,
        }
    }
}

/// Cutoff calibration against fresh images from the toy distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    pub reference: usize,
    pub quantile: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            reference: 4096,
            quantile: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractStage {
    pub generations: usize,
    pub sampler: SamplerOptions,
    pub scan: ScanConfig,
    /// Also applied to the dedup stage's scans.
    pub calibration: Option<Calibration>,
    pub seed: u64,
}

impl Default for ExtractStage {
    fn default() -> Self {
        ExtractStage {
            generations: 4096,
            sampler: SamplerOptions::default(),
            scan: ScanConfig::default(),
            calibration: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaStage {
    pub shadows: ShadowConfig,
    pub loss: LossConfig,
    pub variance: VarianceMode,
    pub fpr: f64,
    pub t_list: Vec<usize>,
    pub loglog_bins: usize,
    /// Checkpoints kept per shadow for the progress attack.
    pub progress_checkpoints: u64,
}

impl Default for MiaStage {
    fn default() -> Self {
        MiaStage {
            shadows: ShadowConfig::default(),
            loss: LossConfig::default(),
            variance: VarianceMode::Global,
            fpr: 0.1,
            t_list: vec![1, 10, 25, 50, 90],
            loglog_bins: 20,
            progress_checkpoints: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintStage {
    pub attack: InpaintAttackConfig,
    pub targets: usize,
}

impl Default for InpaintStage {
    fn default() -> Self {
        InpaintStage {
            attack: InpaintAttackConfig::default(),
            targets: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupStage {
    pub threshold: f64,
    pub run: ExtractionRunConfig,
}

impl Default for DedupStage {
    fn default() -> Self {
        DedupStage {
            threshold: 0.95,
            run: ExtractionRunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanaryStage {
    pub pool: usize,
    pub audit: CanaryAuditConfig,
}

impl Default for CanaryStage {
    fn default() -> Self {
        CanaryStage {
            pool: 256,
            audit: CanaryAuditConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed below is derived from it.
    pub seed: u64,
    pub data: DataSource,
    pub schedule: ScheduleParams,
    pub model: ModelConfig,
    /// Use this checkpoint instead of training a model.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainingConfig,
    pub generate: GenerateStage,
    pub extract: ExtractStage,
    pub mia: MiaStage,
    pub inpaint: InpaintStage,
    pub dedup: DedupStage,
    pub canary: CanaryStage,
}


impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value` overrides; `key` is a dotted path and `value` is
    /// parsed as JSON, falling back to a plain string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override `{s}` is not key=value")))?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    /// Overwrites every stage seed with `derive_named(master, stage, 0)`.
    pub fn fan_out_seeds(&mut self) -> BTreeMap<String, u64> {
        let m = self.seed;
        let s = |name: &str| derive_named(m, name, 0);
        let seeds: BTreeMap<String, u64> = [
            "data",
            "train",
            "generate",
            "extract",
            "mia",
            "mia-loss",
            "inpaint",
            "dedup",
            "canary",
            "canary-loss",
        ]
        .iter()
        .map(|n| (n.to_string(), s(n)))
        .collect();
        if let DataSource::Toy { toy, .. } = &mut self.data {
            toy.seed = seeds["data"];
        }
        self.train.seed = seeds["train"];
        self.generate.seed = seeds["generate"];
        self.extract.seed = seeds["extract"];
        self.mia.shadows.seed = seeds["mia"];
        self.mia.loss.seed = seeds["mia-loss"];
        self.inpaint.attack.seed = seeds["inpaint"];
        self.dedup.run.seed = seeds["dedup"];
        self.canary.audit.seed = seeds["canary"];
        self.canary.audit.loss.seed = seeds["canary-loss"];
        seeds
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Argument(format!(
                "empty segment in override key `{key}`"
            )));
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Argument(format!("`{key}` descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}
