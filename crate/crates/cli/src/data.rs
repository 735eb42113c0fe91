//! Turns the manifest's data section into datasets.
//!
//! Training commands go through [`training_data`], which never opens the
//! target label file; only evaluation uses [`evaluation_data`].

use anyhow::Context;
use protoalign::datasets::idx::{decode_images, load_digits, load_idx, resize_bilinear};
use protoalign::datasets::{gen_gaussian_shift, gen_two_moons_shift, standardize_by_source, subsample};
use protoalign::{DomainDataset, DomainTag, LabelOracle, UnlabeledDataset};

use crate::exit::DataError;
use crate::manifest::{DataSpec, IdxSpec, Manifest};

pub struct TrainingData {
    pub source: DomainDataset,
    pub target: UnlabeledDataset,
}

pub fn training_data(m: &Manifest) -> anyhow::Result<TrainingData> {
    let (source, target) = match &m.data {
        DataSpec::Gaussian(spec) => gen_gaussian_shift(spec)?,
        DataSpec::Moons(spec) => gen_two_moons_shift(spec)?,
        DataSpec::Idx(spec) => idx_pair(spec, m.seed, false)?,
    };
    // Generated targets come with labels; they are dropped unread.
    let (target, _) = target.into_unlabeled();
    Ok(TrainingData { source, target })
}

pub fn evaluation_data(m: &Manifest) -> anyhow::Result<(DomainDataset, UnlabeledDataset, LabelOracle)> {
    let (source, target) = match &m.data {
        DataSpec::Gaussian(spec) => gen_gaussian_shift(spec)?,
        DataSpec::Moons(spec) => gen_two_moons_shift(spec)?,
        DataSpec::Idx(spec) => idx_pair(spec, m.seed, true)?,
    };
    let (target, oracle) = target.into_unlabeled();
    let oracle = oracle.ok_or_else(|| DataError("target labels are missing".into()))?;
    Ok((source, target, oracle))
}

fn idx_pair(spec: &IdxSpec, seed: u64, with_target_labels: bool) -> anyhow::Result<(DomainDataset, DomainDataset)> {
    let resize = |r: Option<[usize; 2]>| r.map(|[h, w]| (h, w));
    let mut source = load_digits(&spec.source_images, &spec.source_labels, DomainTag::Source, resize(spec.source_resize))
        .with_context(|| format!("loading {}", spec.source_images.display()))?;
    let mut target = if with_target_labels {
        load_digits(&spec.target_images, &spec.target_labels, DomainTag::Target, resize(spec.target_resize))
    } else {
        let t = load_idx(&spec.target_images)?;
        let mut x = decode_images(&t)?;
        if let Some([h, w]) = spec.target_resize {
            x = resize_bilinear(&x, t.dims[1], t.dims[2], h, w)?;
        }
        DomainDataset::new(x, None, DomainTag::Target, spec.class_count)
    }
    .with_context(|| format!("loading {}", spec.target_images.display()))?;
    for d in [&mut source, &mut target] {
        if let Some(bad) = d.labels().and_then(|l| l.iter().find(|&&y| y >= spec.class_count)) {
            return Err(DataError(format!("label {bad} outside [0, {})", spec.class_count)).into());
        }
        d.class_count = spec.class_count;
    }
    if source.input_dim() != target.input_dim() {
        return Err(DataError(format!(
            "source images have {} pixels and target images {}; set source_resize or target_resize",
            source.input_dim(),
            target.input_dim()
        ))
        .into());
    }
    if let Some(n) = spec.source_samples {
        source = subsample(&source, n, seed)?;
    }
    if let Some(n) = spec.target_samples {
        target = subsample(&target, n, seed)?;
    }
    if spec.standardize {
        standardize_by_source(&mut source, &mut target);
    }
    Ok((source, target))
}
