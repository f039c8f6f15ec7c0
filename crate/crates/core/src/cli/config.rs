use super::CliError;
use crate::transforms::{TransformFamily, TransformSpec};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Gaussian,
    Transfer,
}

fn parse_spec(s: &str) -> Result<TransformSpec, String> {
    let spec: TransformSpec = serde_json::from_str(s).map_err(|e| format!("bad transform spec JSON: {e}"))?;
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Run settings. Every key may come from a flat JSON file (`--config`) and
/// be overridden by the matching flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic model JSON used as the oracle.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Base URL of a remote prediction service.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Recorded prediction log to replay.
    #[arg(long)]
    pub playback: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Search the whole grid of this transform family.
    #[arg(long, value_enum)]
    pub family: Option<TransformFamily>,
    /// Explicit transform as JSON, e.g. `{"kind":"gaussian","sigma":0.1}`.
    #[arg(long, value_parser = parse_spec)]
    pub spec: Option<TransformSpec>,
    /// Transformed queries per sample; 0 selects the naive baseline.
    #[arg(short = 'S', long = "s")]
    pub s: Option<usize>,
    /// Validation samples (taken first from the dataset).
    #[arg(long)]
    pub m: Option<usize>,
    /// Test samples (following the validation split).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub run_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Refuse to start when the planned query count exceeds this.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Persistent query cache (JSON lines).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Fit result to apply instead of fitting.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model_kind: Option<ModelChoice>,
    /// Empirical CDF JSON for the transfer model.
    #[arg(long)]
    pub transfer_cdf: Option<PathBuf>,
    /// Draws per image for diagnostics.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub s_list: Option<Vec<usize>>,
    /// Diagnostic statistics to attach to the metrics report.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Run directories or metrics files to aggregate.
    #[arg(long, value_delimiter = ',')]
    pub runs: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Concurrent queries (worker threads, and open requests for HTTP).
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(spec) = &cfg.spec {
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Keys set in `top` win.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base,
            top,
            model,
            endpoint,
            playback,
            dataset,
            family,
            spec,
            s,
            m,
            n,
            run_seed,
            out,
            budget,
            cache,
            calibration,
            model_kind,
            transfer_cdf,
            draws,
            s_list,
            diagnostics,
            runs,
            timeout_secs,
            max_retries,
            max_in_flight
        )
    }

    pub fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        Ok(Self::require(&self.out, "out")?.as_path())
    }

    /// Explicit spec, else the family grid.
    pub fn candidate_specs(&self) -> Result<Vec<TransformSpec>, CliError> {
        match (&self.spec, self.family) {
            (Some(spec), _) => Ok(vec![*spec]),
            (None, Some(f)) => Ok(crate::transforms::transform_grid(f)),
            (None, None) => Err(CliError::Config("set either `spec` or `family`".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = serde_json::from_str(r#"{"s": 10, "m": 5, "family": "rotation", "run_seed": 3}"#).unwrap();
        let flags = RunConfig {
            s: Some(50),
            spec: Some(TransformSpec::Gaussian { sigma: 0.1 }),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.s, Some(50));
        assert_eq!(merged.m, Some(5));
        assert_eq!(merged.run_seed(), 3);
        assert_eq!(merged.candidate_specs().unwrap(), vec![TransformSpec::Gaussian { sigma: 0.1 }]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sample_count": 3}"#).is_err());
    }

    #[test]
    fn family_expands_to_grid() {
        let cfg = RunConfig {
            family: Some(TransformFamily::Elastic),
            ..Default::default()
        };
        assert_eq!(cfg.candidate_specs().unwrap().len(), 12);
        assert!(RunConfig::default().candidate_specs().is_err());
    }

    #[test]
    fn spec_flag_parses_json() {
        assert!(parse_spec(r#"{"kind":"rotation","max_degrees":10}"#).is_ok());
        assert!(parse_spec(r#"{"kind":"rotation","max_degrees":-1}"#).is_err());
        assert!(parse_spec("rotation").is_err());
    }
}
