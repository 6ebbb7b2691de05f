use serde::{Deserialize, Serialize};

use super::MasterDataset;
use crate::error::{config, Result};
use crate::numerics::{self, Matrix};
use crate::rng::{self, gaussian_vec, tags};

const PROTOTYPE_TRIES: usize = 1000;
const MAX_PROTOTYPE_COS: f64 = 0.5;

/// Gaussian clusters around near-orthogonal unit prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 10, dim: 64, per_class: 50, sigma: 0.1, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return config(format!("synthetic data needs at least 2 classes, got {}", self.classes));
        }
        if self.dim == 0 || self.per_class == 0 {
            return config("synthetic data needs a positive width and class size");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return config(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Class `c` samples are `normalize(prototype_c + N(0, σ² I))`, stored
/// class by class.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<MasterDataset> {
    spec.validate()?;
    let mut proto_rng = rng::stream(&[tags::DATA, 0x50524f54, spec.seed]);
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut accepted = None;
        for _ in 0..PROTOTYPE_TRIES {
            let (p, _) = numerics::normalize(&gaussian_vec(&mut proto_rng, spec.dim, 1.0))?;
            if prototypes.iter().all(|q| numerics::dot(&p, q).abs() < MAX_PROTOTYPE_COS) {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => prototypes.push(p),
            None => {
                return config(format!(
                    "could not place prototype {c} of {} in {} dimensions; width too small for the class count",
                    spec.classes, spec.dim
                ))
            }
        }
    }
    let n = spec.classes * spec.per_class;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut noise_rng = rng::stream(&[tags::DATA, 0x4e4f4953, spec.seed]);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let noise = gaussian_vec(&mut noise_rng, spec.dim, spec.sigma);
            let raw: Vec<f64> = proto.iter().zip(&noise).map(|(p, e)| p + e).collect();
            values.extend(numerics::normalize(&raw)?.0);
            labels.push(c);
        }
    }
    MasterDataset::new(Matrix::from_vec(n, spec.dim, values)?, labels, spec.classes, None)
}

/// Feature-space shift: Givens rotations by `angle` in the first `planes`
/// coordinate pairs, then scaling and additive noise, then renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainTransform {
    pub angle: f64,
    /// Coordinate planes `(0,1), (2,3), …` rotated; `None` rotates all.
    pub planes: Option<usize>,
    pub scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DomainTransform {
    fn default() -> Self {
        Self { angle: 0.0, planes: None, scale: 1.0, noise: 0.0, seed: 0 }
    }
}

pub fn apply_domain_shift(ds: &MasterDataset, t: &DomainTransform) -> Result<MasterDataset> {
    if ![t.angle, t.scale, t.noise].iter().all(|v| v.is_finite()) || t.noise < 0.0 || t.scale <= 0.0 {
        return config("domain transform parameters must be finite, with positive scale and non-negative noise");
    }
    if t.angle == 0.0 && t.noise == 0.0 {
        return Ok(ds.clone());
    }
    let d = ds.dim();
    let planes = t.planes.unwrap_or(d / 2).min(d / 2);
    let (sin, cos) = t.angle.sin_cos();
    let mut values = Vec::with_capacity(ds.len() * d);
    for i in 0..ds.len() {
        let mut x = ds.feature(i).to_vec();
        for p in 0..planes {
            let (a, b) = (x[2 * p], x[2 * p + 1]);
            x[2 * p] = cos * a - sin * b;
            x[2 * p + 1] = sin * a + cos * b;
        }
        let noise = gaussian_vec(&mut rng::stream(&[tags::DATA, 0x53484654, t.seed, i as u64]), d, 1.0);
        for (v, e) in x.iter_mut().zip(&noise) {
            *v = t.scale * *v + t.noise * e;
        }
        values.extend(numerics::normalize(&x)?.0);
    }
    let mut out = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
    out.features = Matrix::from_vec(ds.len(), d, values)?;
    out.local_maps = None;
    Ok(out)
}
