//! Engine settings shared by every subcommand. Each flag has a TOML key of
//! the same name; flags win over the file, the file over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use popsweeper::backend::BackendSource;
use popsweeper::classifier::FusionPolicy;
use popsweeper::sampler::{ReferenceMode, SimilarityMetric};
use popsweeper::{Backends, EngineConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EngineArgs {
    /// Sampling tick in milliseconds [default: 100]
    #[arg(long)]
    pub interval_ms: Option<u64>,
    /// Forward a considered frame when similarity drops below this [default: 0.8]
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    /// Histogram bins per RGB channel, a power of two up to 256 [default: 64]
    #[arg(long)]
    pub histogram_bins: Option<usize>,
    /// intersection | correlation
    #[arg(long, value_parser = kebab::<SimilarityMetric>)]
    pub similarity_metric: Option<SimilarityMetric>,
    /// last-forwarded | consecutive
    #[arg(long, value_parser = kebab::<ReferenceMode>)]
    pub reference_mode: Option<ReferenceMode>,
    /// Threshold for both classifier stages [default: 0.5]
    #[arg(long)]
    pub classifier_threshold: Option<f64>,
    /// Primary-stage threshold, overriding --classifier-threshold
    #[arg(long)]
    pub primary_threshold: Option<f64>,
    /// Secondary-stage threshold, overriding --classifier-threshold
    #[arg(long)]
    pub secondary_threshold: Option<f64>,
    /// conjunctive | primary-dominant
    #[arg(long, value_parser = kebab::<FusionPolicy>)]
    pub fusion_policy: Option<FusionPolicy>,
    /// Minimum detector confidence [default: 0.25]
    #[arg(long)]
    pub detector_conf_threshold: Option<f64>,
    /// Stop clicking a pop-up after this many consecutive dismissals
    #[arg(long)]
    pub max_dismiss_attempts: Option<u32>,
    /// ONNX graph for the primary classifier
    #[arg(long)]
    pub primary_model: Option<PathBuf>,
    /// ONNX graph for the secondary classifier
    #[arg(long)]
    pub secondary_model: Option<PathBuf>,
    /// ONNX graph for the close-button detector
    #[arg(long)]
    pub detector_model: Option<PathBuf>,
    /// Scripted-oracle JSON answering every stage without a model
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        EngineArgs { $($f: $a.$f.or($b.$f)),* }
    };
}

impl EngineArgs {
    /// Fill unset fields from `fallback`.
    pub fn or(self, fallback: EngineArgs) -> EngineArgs {
        let (a, b) = (self, fallback);
        prefer!(a, b; interval_ms, similarity_threshold, histogram_bins, similarity_metric,
            reference_mode, classifier_threshold, primary_threshold, secondary_threshold,
            fusion_policy, detector_conf_threshold, max_dismiss_attempts, primary_model,
            secondary_model, detector_model, oracle)
    }

    /// Merge with a TOML file, resolving its relative paths against the
    /// file's directory.
    pub fn with_file(self, path: Option<&Path>) -> Result<EngineArgs> {
        let Some(path) = path else { return Ok(self) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut file: EngineArgs =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut file.primary_model,
            &mut file.secondary_model,
            &mut file.detector_model,
            &mut file.oracle,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(self.or(file))
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut c = EngineConfig::default();
        if let Some(v) = self.interval_ms {
            c.sampler.interval_ms = v;
        }
        if let Some(v) = self.similarity_threshold {
            c.sampler.similarity_threshold = v;
        }
        if let Some(v) = self.histogram_bins {
            c.sampler.bins_per_channel = v;
        }
        if let Some(v) = self.similarity_metric {
            c.sampler.metric = v;
        }
        if let Some(v) = self.reference_mode {
            c.sampler.reference = v;
        }
        if let Some(v) = self.classifier_threshold {
            c.cascade.primary_threshold = v;
            c.cascade.secondary_threshold = v;
        }
        if let Some(v) = self.primary_threshold {
            c.cascade.primary_threshold = v;
        }
        if let Some(v) = self.secondary_threshold {
            c.cascade.secondary_threshold = v;
        }
        if let Some(v) = self.fusion_policy {
            c.cascade.policy = v;
        }
        if let Some(v) = self.detector_conf_threshold {
            c.detector_conf_threshold = v;
        }
        c.max_dismiss_attempts = self.max_dismiss_attempts;
        c
    }

    /// Per stage: the model if given, else the oracle.
    pub fn backends(&self) -> Result<Backends> {
        let pick = |model: &Option<PathBuf>, stage: &str| -> Result<BackendSource> {
            match (model, &self.oracle) {
                (Some(m), _) => Ok(BackendSource::Model(m.clone())),
                (None, Some(o)) => Ok(BackendSource::Script(o.clone())),
                (None, None) => bail!("no backend for the {stage} stage: pass --{stage}-model or --oracle"),
            }
        };
        let primary = pick(&self.primary_model, "primary")?;
        let secondary = pick(&self.secondary_model, "secondary")?;
        let detector = pick(&self.detector_model, "detector")?;
        Ok(Backends::load(&primary, &secondary, &detector)?)
    }
}
