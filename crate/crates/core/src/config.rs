//! TOML run configuration.
//!
//! ```toml
//! command = "pretrain"
//! seed = 3
//!
//! [dataset]
//! source = "tudataset"
//! path = "data/PROTEINS"
//! name = "PROTEINS"
//!
//! [pretrain]
//! epochs = 20
//! pool_i = [{ kind = "node_drop" }, { kind = "subgraph" }]
//! ```
//!
//! Unknown keys are rejected everywhere. Randomness is driven by the single
//! top-level `seed`; sweeps may list several `sweep.seeds`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationKind, AugmentationPool, AugmentationSpec};
use crate::contrastive::PretrainConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{category_for_name, load_tudataset, synthetic_corpus, Category, GraphDataset, SyntheticConfig};
use crate::pipelines::{ExperimentConfig, FinetuneConfig, SplitSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Tudataset,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Directory holding `<name>_A.txt` and its companions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Overrides the category inferred from the name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub synthetic: SyntheticConfig,
}

impl DatasetConfig {
    pub fn load(&self) -> Result<GraphDataset> {
        let dataset = match self.source {
            DataSource::Synthetic => synthetic_corpus(&self.synthetic)?,
            DataSource::Tudataset => {
                let (path, name) = self.tudataset_location()?;
                load_tudataset(path, name)?
            }
        };
        Ok(match self.category {
            Some(category) => dataset.with_category(category),
            None => dataset,
        })
    }

    fn tudataset_location(&self) -> Result<(&Path, &str)> {
        match (&self.path, &self.name) {
            (Some(path), Some(name)) => Ok((path, name)),
            _ => Err(Error::Config("dataset.path and dataset.name are required for tudataset".into())),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synthetic => {
                let s = &self.synthetic;
                if s.num_graphs == 0 || s.min_nodes == 0 || s.min_nodes > s.max_nodes {
                    return Err(Error::Config(format!(
                        "dataset.synthetic needs num_graphs ≥ 1 and 1 ≤ min_nodes ≤ max_nodes, got {s:?}"
                    )));
                }
            }
            DataSource::Tudataset => {
                let (path, name) = self.tudataset_location()?;
                if !path.is_dir() {
                    return Err(Error::Config(format!("dataset directory {} does not exist", path.display())));
                }
                if self.category.is_none() && category_for_name(name).is_none() {
                    log::warn!("unknown dataset {name}; treating it as synthetic for augmentation pools");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub folds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Grid axis besides identity.
    pub kinds: Vec<AugmentationKind>,
    pub strength_kind: AugmentationKind,
    pub ratios: Vec<f64>,
    pub pattern_kind: AugmentationKind,
    pub alphas: Vec<f64>,
    /// Pool pairs for `loss-compare`, one augmentation per side at the default ratio.
    pub pairs: Vec<(AugmentationKind, AugmentationKind)>,
    /// Empty means the top-level seed alone.
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        use AugmentationKind::*;
        Self {
            kinds: vec![NodeDrop, EdgePerturb, AttrMask, Subgraph],
            strength_kind: EdgePerturb,
            ratios: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            pattern_kind: AttrMask,
            alphas: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            pairs: vec![(AttrMask, AttrMask), (AttrMask, NodeDrop)],
            seeds: Vec::new(),
        }
    }
}

impl SweepConfig {
    pub fn pool_pairs(&self) -> Vec<(AugmentationPool, AugmentationPool)> {
        let pool = |k| AugmentationPool::single(AugmentationSpec::new(k));
        self.pairs.iter().map(|&(a, b)| (pool(a), pool(b))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Random draws per component.
    pub draws: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            draws: 20,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Pretrained model read by `finetune`, `embed` and `probe`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub split: SplitSpec,
    pub finetune: FinetuneConfig,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradCheckConfig,
}

pub const COMMANDS: [&str; 10] = [
    "pretrain",
    "finetune",
    "scratch",
    "embed",
    "probe",
    "aug-grid",
    "strength-sweep",
    "pattern-sweep",
    "loss-compare",
    "grad-check",
];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Reads, validates and fills defaults. Relative paths are taken from the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut config.dataset.path);
        resolve(&mut config.checkpoint);
        resolve(&mut config.output_dir);
        config.validate()?;
        Ok(config)
    }

    /// Parses TOML without touching the file system.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            Error::Config(match line {
                Some(line) => format!("line {line}: {}", e.message()),
                None => e.message().to_string(),
            })
        })?;
        for section in ["pretrain", "split", "finetune"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(Error::Config(format!(
                    "{section}.seed is not accepted; set the top-level seed"
                )));
            }
        }
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            Error::Config(match line {
                Some(line) => format!("line {line}: {}", e.message()),
                None => e.message().to_string(),
            })
        })?;
        config.validate_ranges()?;
        Ok(config)
    }

    fn validate_ranges(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        if let Some(command) = &self.command {
            if !COMMANDS.contains(&command.as_str()) {
                return Err(Error::Config(format!("unknown command {command:?}")));
            }
        }
        self.experiment().validate().map_err(wrap)?;
        if self.probe.folds < 2 {
            return Err(Error::Config("probe.folds must be at least 2".into()));
        }
        if let Some(r) = self.sweep.ratios.iter().find(|r| !(0.0..=0.5).contains(*r)) {
            return Err(Error::Config(format!("sweep ratio {r} is outside [0, 0.5]")));
        }
        if self.sweep.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("sweep alphas must be finite".into()));
        }
        if !self.sweep.pattern_kind.supports_degree_bias() {
            return Err(Error::Config(format!(
                "sweep.pattern_kind {} has no degree-biased pattern",
                self.sweep.pattern_kind
            )));
        }
        let g = &self.gradcheck;
        if g.draws == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return Err(Error::Config("gradcheck needs draws ≥ 1, step > 0 and tolerance > 0".into()));
        }
        Ok(())
    }

    /// Range checks plus existence of referenced files.
    pub fn validate(&self) -> Result<()> {
        self.validate_ranges()?;
        self.dataset.validate()?;
        if let Some(checkpoint) = &self.checkpoint {
            if !checkpoint.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", checkpoint.display())));
            }
        }
        Ok(())
    }

    /// Pipeline configuration with the global seed applied.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            encoder: self.encoder.clone(),
            pretrain: self.pretrain.clone(),
            split: self.split.clone(),
            finetune: self.finetune.clone(),
        }
        .with_seed(self.seed)
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.sweep.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.sweep.seeds.clone()
        }
    }

    /// Effective configuration as TOML; section seeds follow the top-level seed
    /// and are left out.
    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for section in ["pretrain", "split", "finetune"] {
            if let Some(toml::Value::Table(t)) = table.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml("command = \"pretrain\"\n[dataset]\nsource = \"synthetic\"\n").unwrap();
        assert_eq!(c.pretrain.temperature, 0.5);
        assert_eq!(c.encoder.num_layers, 3);
        assert_eq!(crate::augment::DEFAULT_RATIO, 0.2);
        assert_eq!(c.experiment().pretrain.seed, 0);
    }

    #[test]
    fn rejects_bad_values() {
        let err = RunConfig::from_toml("[pretrain]\ntemperature = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");
        let err = RunConfig::from_toml("seed = 1\nfoo = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("foo"), "{err}");
        assert!(RunConfig::from_toml("[encoder]\nwidth = 3\n").is_err());
        assert!(RunConfig::from_toml("[pretrain]\nseed = 3\n").is_err());
        assert!(RunConfig::from_toml("command = \"train\"\n").is_err());
        assert!(RunConfig::from_toml("[sweep]\nratios = [0.6]\n").is_err());
        let err = RunConfig::from_toml("seed = \n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn pools_parse_and_echo_round_trips() {
        let text = "seed = 4\n[pretrain]\npool_i = [{ kind = \"node_drop\", ratio = 0.1 }]\n\
                    pool_j = [{ kind = \"attr_mask\", alpha = -1.0 }, { kind = \"subgraph\" }]\n";
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.pretrain.pool_j.as_ref().unwrap().specs().len(), 2);
        let echoed = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(echoed, c);
        assert!(RunConfig::from_toml("[pretrain]\npool_i = []\n").is_err());
    }

    #[test]
    fn tudataset_requires_existing_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[dataset]\nsource = \"tudataset\"\nname = \"X\"\npath = \"missing\"\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        std::fs::create_dir(dir.path().join("missing")).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.dataset.path.unwrap(), dir.path().join("missing"));
    }
}
