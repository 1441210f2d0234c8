use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::Combiner;
use crate::numkit::MlpSpec;
use crate::tasks::{StreamKind, SyntheticSpec, TaskStream};
use crate::trainers::{Method, TrainConfig};
use crate::{Error, Result};

/// One experiment: a method, a benchmark and the seeds to run it on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub combiner: Combiner,
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub kind: StreamKind,
    pub tasks: usize,
    /// Rotation step of a rotated stream.
    pub delta_deg: Option<f64>,
    pub classes_per_task: Option<usize>,
    /// Examples per task for rotated and permuted streams.
    pub train_per_task: Option<usize>,
    pub test_per_task: Option<usize>,
    /// Examples per class for split streams.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    /// Directory with the IDX files; overrides `ECL_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Taken from the benchmark when absent; must match it when given.
    pub input_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub output_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: None,
            hidden: vec![100, 100],
            output_dim: None,
            dropout: 0.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        self.train.validate()?;
        let b = &self.benchmark;
        if b.tasks == 0 {
            return bad("benchmark.tasks must be >= 1".into());
        }
        let need = |field: &str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!("benchmark.{field} is required for kind {:?}", b.kind)))
            }
        };
        match b.kind {
            StreamKind::Rotated => {
                need("delta_deg", b.delta_deg.is_some())?;
                need("train_per_task", b.train_per_task.is_some())?;
                need("test_per_task", b.test_per_task.is_some())?;
            }
            StreamKind::Permuted => {
                need("train_per_task", b.train_per_task.is_some())?;
                need("test_per_task", b.test_per_task.is_some())?;
            }
            StreamKind::Split => {
                need("classes_per_task", b.classes_per_task.is_some())?;
                need("train_per_class", b.train_per_class.is_some())?;
                need("test_per_class", b.test_per_class.is_some())?;
            }
            StreamKind::Synthetic => {
                need("synthetic", b.synthetic.is_some())?;
                if b.synthetic.as_ref().is_some_and(|s| s.tasks != b.tasks) {
                    return bad("benchmark.synthetic.tasks must equal benchmark.tasks".into());
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return bad("model.hidden sizes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad("model.dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    /// The network for `stream`, checking any dimensions fixed in the file.
    pub fn model_spec(&self, stream: &TaskStream) -> Result<MlpSpec> {
        let (input, output) = (stream.input_dim(), stream.output_dim());
        for (field, given, actual) in [
            ("input_dim", self.model.input_dim, input),
            ("output_dim", self.model.output_dim, output),
        ] {
            if given.is_some_and(|g| g != actual) {
                return Err(Error::Config(format!(
                    "model.{field} = {} but the benchmark needs {actual}",
                    given.unwrap()
                )));
            }
        }
        MlpSpec::new(input, self.model.hidden.clone(), output)
            .and_then(|s| s.with_dropout(self.model.dropout))
            .map_err(|e| Error::Config(format!("model: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
method = "subspace"
seeds = [0, 1]
output_dir = "out"

[benchmark]
kind = "rotated"
tasks = 5
delta_deg = 22.5
train_per_task = 1000
test_per_task = 200
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.method, Method::Subspace);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.model.hidden, vec![100, 100]);
        assert_eq!(c.combiner, Combiner::Average);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let text = format!("{MINIMAL}\n[train]\nlearning_rate = 0.1\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_benchmark_field_is_named() {
        let text = MINIMAL.replace("delta_deg = 22.5\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("benchmark.delta_deg"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        for (from, to) in [("seeds = [0, 1]", "seeds = []"), ("seeds = [0, 1]", "seeds = [1, 1]")] {
            assert!(matches!(RunConfig::from_toml_str(&MINIMAL.replace(from, to)), Err(Error::Config(_))));
        }
        let text = format!("{MINIMAL}\n[train]\nmomentum = 1.0\n");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
    }
}
