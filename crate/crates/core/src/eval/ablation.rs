use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::adistance::median;
use crate::error::{Error, Result};
use crate::trainer::{RunReport, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Final target accuracy per seed, in the order of [`AblationTable::seeds`].
    pub accuracies: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn median(&self, variant: Variant) -> Option<f64> {
        self.row(variant).map(|r| r.median)
    }

    /// `variant,seed_<s>...,median`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            let _ = write!(out, ",seed_{s}");
        }
        out.push_str(",median\n");
        for r in &self.rows {
            out.push_str(r.variant.name());
            for a in &r.accuracies {
                let _ = write!(out, ",{a}");
            }
            let _ = writeln!(out, ",{}", r.median);
        }
        out
    }
}

/// Final target accuracy per variant and seed, one row per variant (in
/// [`Variant::ALL`] order) with the median over seeds. Every variant must
/// cover the same seeds of the same dataset, and every report must carry
/// target accuracy.
pub fn ablation_table(reports: &[RunReport]) -> Result<AblationTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Parameter("ablation table needs at least one report".into()))?;
    if let Some(r) = reports.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::Parameter(format!(
            "reports mix datasets '{}' and '{}'",
            first.dataset, r.dataset
        )));
    }
    let mut cells: BTreeMap<Variant, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in reports {
        let acc = r.final_target_accuracy().ok_or_else(|| {
            Error::Parameter(format!("{} seed {} has no target accuracy", r.variant, r.seed))
        })?;
        if cells.entry(r.variant).or_default().insert(r.seed, acc).is_some() {
            return Err(Error::Parameter(format!("duplicate run {} seed {}", r.variant, r.seed)));
        }
    }
    let seeds: BTreeSet<u64> = cells.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
    for (v, m) in &cells {
        let own: BTreeSet<u64> = m.keys().copied().collect();
        if own != seeds {
            return Err(Error::Parameter(format!(
                "variant {v} covers seeds {own:?}, expected {seeds:?}"
            )));
        }
    }
    let rows = Variant::ALL
        .into_iter()
        .filter_map(|v| cells.get(&v).map(|m| (v, m)))
        .map(|(variant, m)| {
            let accuracies: Vec<f64> = m.values().copied().collect();
            AblationRow {
                variant,
                median: median(&accuracies),
                accuracies,
            }
        })
        .collect();
    Ok(AblationTable {
        dataset: first.dataset.clone(),
        seeds: seeds.into_iter().collect(),
        rows,
    })
}
