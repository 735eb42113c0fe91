//! Experiment manifest: one TOML file that fully determines a run.
//!
//! ```toml
//! name = "gauss-30"
//! seed = 0
//! out_dir = "runs/gauss-30"
//!
//! [data]
//! kind = "gaussian"          # gaussian | moons | idx
//! rotation = 0.5235987755982988
//! noise_std = 1.0
//!
//! [train]
//! pretrain_epochs = 200
//! domain_loss_target = "full"
//!
//! [eval]
//! probe_seeds = [0, 1, 2]
//!
//! [ablate]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! The top-level `seed` is copied into the data and training sections, so a
//! manifest written back out states every seed it used.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use protoalign::eval::{ADistanceFormula, ProbeOptions};
use protoalign::{SyntheticShiftSpec, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;

pub const OUT_ROOT_ENV: &str = "PROTOALIGN_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Dataset tag carried into reports.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub ablate: AblateOptions,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSpec {
    Gaussian(SyntheticShiftSpec),
    Moons(SyntheticShiftSpec),
    Idx(IdxSpec),
}

/// A pair of IDX image/label files per domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    /// Read by `eval` only.
    pub target_labels: PathBuf,
    /// `[height, width]` to resample the source images to.
    #[serde(default)]
    pub source_resize: Option<[usize; 2]>,
    #[serde(default)]
    pub target_resize: Option<[usize; 2]>,
    #[serde(default)]
    pub source_samples: Option<usize>,
    #[serde(default)]
    pub target_samples: Option<usize>,
    /// Standardise both domains with source statistics.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "ten")]
    pub class_count: usize,
}

fn yes() -> bool {
    true
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub a_distance: bool,
    pub probe_seeds: Vec<u64>,
    pub probe_epochs: usize,
    pub probe_hidden: usize,
    pub probe_lr: f64,
    pub formula: ADistanceFormula,
    pub embedding: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let p = ProbeOptions::default();
        EvalOptions {
            a_distance: true,
            probe_seeds: vec![0, 1, 2],
            probe_epochs: p.epochs,
            probe_hidden: p.hidden,
            probe_lr: p.lr,
            formula: p.formula,
            embedding: true,
        }
    }
}

impl EvalOptions {
    pub fn probe(&self) -> ProbeOptions {
        ProbeOptions {
            epochs: self.probe_epochs,
            hidden: self.probe_hidden,
            lr: self.probe_lr,
            formula: self.formula,
            ..ProbeOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateOptions {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 picks the number of available cores.
    pub threads: usize,
}

impl Default for AblateOptions {
    fn default() -> Self {
        AblateOptions {
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            threads: 0,
        }
    }
}

impl Manifest {
    /// Parses `text`, applies `key.path=value` overrides and normalises seeds.
    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Manifest> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError(format!("manifest: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut m: Manifest = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| ConfigError(format!("manifest: {e}")))?;
        m.normalize();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m = Self::parse(&text, overrides)?;
        m.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(m)
    }

    /// Relative data paths are taken relative to the manifest file.
    fn resolve_paths(&mut self, base: &Path) {
        if let DataSpec::Idx(spec) = &mut self.data {
            for p in [
                &mut spec.source_images,
                &mut spec.source_labels,
                &mut spec.target_images,
                &mut spec.target_labels,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn with_seed(&self, seed: u64) -> Manifest {
        let mut m = self.clone();
        m.seed = seed;
        m.normalize();
        m
    }

    fn normalize(&mut self) {
        self.train.seed = self.seed;
        match &mut self.data {
            DataSpec::Gaussian(s) | DataSpec::Moons(s) => s.seed = self.seed,
            DataSpec::Idx(_) => {}
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if let DataSpec::Gaussian(s) | DataSpec::Moons(s) = &self.data {
            s.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        if self.ablate.variants.is_empty() || self.ablate.seeds.is_empty() {
            return Err(ConfigError("ablate needs at least one variant and one seed".into()).into());
        }
        if self.eval.a_distance && self.eval.probe_seeds.is_empty() {
            return Err(ConfigError("eval.probe_seeds is empty".into()).into());
        }
        Ok(())
    }

    /// Output directory: `--out` wins, then `out_dir`; a relative result is
    /// placed under `$PROTOALIGN_OUT_ROOT` when that is set.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        let dir = flag.map(Path::to_path_buf).unwrap_or_else(|| self.out_dir.clone());
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it is not one.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override '{assignment}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().ok_or_else(|| anyhow!(ConfigError("empty override key".into())))?;
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override '{key}': '{p}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        out_dir = "runs/x"
        seed = 3
        [data]
        kind = "gaussian"
        per_class = 10
    "#;

    #[test]
    fn seed_flows_into_every_section() {
        let m = Manifest::parse(BASE, &[]).unwrap();
        assert_eq!(m.train.seed, 3);
        match &m.data {
            DataSpec::Gaussian(s) => {
                assert_eq!(s.seed, 3);
                assert_eq!(s.per_class, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let m = Manifest::parse(
            BASE,
            &[
                "train.steps=2".into(),
                "train.variant=wo-apa".into(),
                "data.noise_std=0.25".into(),
                "seed=9".into(),
            ],
        )
        .unwrap();
        assert_eq!(m.train.steps, 2);
        assert_eq!(m.train.variant, Variant::WoApa);
        assert_eq!(m.seed, 9);
        assert!(matches!(&m.data, DataSpec::Gaussian(s) if s.noise_std == 0.25 && s.seed == 9));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = Manifest::parse(BASE, &["train.stepz=2".into()]).unwrap_err();
        assert!(e.downcast_ref::<ConfigError>().is_some(), "{e}");
        let e = Manifest::parse("out_dir = 1", &[]).unwrap_err();
        assert!(e.downcast_ref::<ConfigError>().is_some());
        assert!(Manifest::parse(BASE, &["nonsense".into()]).is_err());
    }

    #[test]
    fn written_copy_parses_back_identically() {
        let m = Manifest::parse(BASE, &["train.hidden_dims=[8, 4]".into()]).unwrap();
        assert_eq!(Manifest::parse(&m.to_toml(), &[]).unwrap(), m);
    }

    #[test]
    fn idx_section() {
        let m = Manifest::parse(
            r#"
            out_dir = "o"
            [data]
            kind = "idx"
            source_images = "a"
            source_labels = "b"
            target_images = "c"
            target_labels = "d"
            source_resize = [16, 16]
            "#,
            &[],
        )
        .unwrap();
        assert!(matches!(&m.data, DataSpec::Idx(s) if s.standardize && s.source_resize == Some([16, 16])));
    }
}
