use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DomainDataset, DomainTag};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Stream};

/// Parameters of a synthetic source/target pair. The target is produced by
/// the source's generative process with class means rotated (in the plane of
/// the first two coordinates) and translated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticShiftSpec {
    pub class_count: usize,
    pub input_dim: usize,
    pub per_class: usize,
    /// Radius of the circle holding the class means (Gaussian task) or the
    /// scale of the moons.
    pub radius: f64,
    /// Target rotation in radians.
    pub rotation: f64,
    /// Target translation; shorter vectors are zero-padded.
    pub translation: Vec<f64>,
    pub noise_std: f64,
    /// Optional per-class multiplier on the target noise; missing entries are 1.
    pub target_noise_scale: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticShiftSpec {
    fn default() -> Self {
        SyntheticShiftSpec {
            class_count: 4,
            input_dim: 2,
            per_class: 100,
            radius: 4.0,
            rotation: 30f64.to_radians(),
            translation: Vec::new(),
            noise_std: 0.5,
            target_noise_scale: Vec::new(),
            seed: 7,
        }
    }
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Parameter(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            )));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::Parameter(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if self.input_dim < 2 {
            return Err(Error::Parameter("input_dim must be at least 2".into()));
        }
        if self.translation.len() > self.input_dim {
            return Err(Error::Parameter(format!(
                "translation has {} entries for input_dim {}",
                self.translation.len(),
                self.input_dim
            )));
        }
        if self.target_noise_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter("target_noise_scale entries must be positive".into()));
        }
        Ok(())
    }

    fn shift(&self, point: &mut [f64], center: (f64, f64)) {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (point[0] - center.0, point[1] - center.1);
        point[0] = c * x - s * y + center.0;
        point[1] = s * x + c * y + center.1;
        for (p, t) in point.iter_mut().zip(&self.translation) {
            *p += t;
        }
    }

    fn target_noise(&self, class: usize) -> f64 {
        self.noise_std * self.target_noise_scale.get(class).copied().unwrap_or(1.0)
    }
}

/// Isotropic Gaussian classes at means evenly spaced on a circle.
pub fn gen_gaussian_shift(spec: &SyntheticShiftSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let means: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / spec.class_count as f64;
            let mut m = vec![0.0; spec.input_dim];
            m[0] = spec.radius * a.cos();
            m[1] = spec.radius * a.sin();
            m
        })
        .collect();
    let shifted: Vec<Vec<f64>> = means
        .iter()
        .map(|m| {
            let mut m = m.clone();
            spec.shift(&mut m, (0.0, 0.0));
            m
        })
        .collect();

    let draw = |means: &[Vec<f64>], domain: DomainTag, index: u64| -> Result<DomainDataset> {
        let mut rng = Rng::derive(spec.seed, Stream::Data, index);
        let n = spec.class_count * spec.per_class;
        let mut data = Vec::with_capacity(n * spec.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..spec.per_class {
            for (k, mean) in means.iter().enumerate() {
                let sigma = match domain {
                    DomainTag::Source => spec.noise_std,
                    DomainTag::Target => spec.target_noise(k),
                };
                data.extend(mean.iter().map(|&m| m + sigma * rng.normal()));
                labels.push(k);
            }
        }
        let features = Matrix::from_vec(n, spec.input_dim, data)?;
        DomainDataset::new(features, Some(labels), domain, spec.class_count)
    };
    Ok((
        draw(&means, DomainTag::Source, 0)?,
        draw(&shifted, DomainTag::Target, 1)?,
    ))
}

/// Two interleaving half circles; the target is rotated about the centre of
/// the pair. Requires `class_count == 2`; coordinates past the second carry
/// pure noise.
pub fn gen_two_moons_shift(spec: &SyntheticShiftSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    if spec.class_count != 2 {
        return Err(Error::Parameter(format!(
            "two moons has exactly 2 classes, got {}",
            spec.class_count
        )));
    }
    let center = (0.5 * spec.radius, 0.25 * spec.radius);
    let draw = |domain: DomainTag, index: u64| -> Result<DomainDataset> {
        let mut rng = Rng::derive(spec.seed, Stream::Data, index);
        let n = 2 * spec.per_class;
        let mut data = Vec::with_capacity(n * spec.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..spec.per_class {
            for k in 0..2 {
                let t = rng.uniform(0.0, PI);
                let mut p = vec![0.0; spec.input_dim];
                if k == 0 {
                    p[0] = t.cos();
                    p[1] = t.sin();
                } else {
                    p[0] = 1.0 - t.cos();
                    p[1] = 0.5 - t.sin();
                }
                p[0] *= spec.radius;
                p[1] *= spec.radius;
                if domain == DomainTag::Target {
                    spec.shift(&mut p, center);
                }
                let sigma = match domain {
                    DomainTag::Source => spec.noise_std,
                    DomainTag::Target => spec.target_noise(k),
                };
                data.extend(p.iter().map(|&v| v + sigma * rng.normal()));
                labels.push(k);
            }
        }
        let features = Matrix::from_vec(n, spec.input_dim, data)?;
        DomainDataset::new(features, Some(labels), domain, 2)
    };
    Ok((draw(DomainTag::Source, 0)?, draw(DomainTag::Target, 1)?))
}
