use rand::Rng;

use crate::error::{config, Result};
use crate::numerics::{self, Matrix};
use crate::rng::gaussian_vec;

/// One labelled image as seen by a trainer: the unit global feature and,
/// for transport-based methods, its per-region local features.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    /// Index into the master dataset; used for leak audits.
    pub id: usize,
    pub feature: &'a [f64],
    pub locals: Option<&'a Matrix>,
    /// Label in the task's class order.
    pub label: usize,
}

/// `regions` perturbed, renormalized copies of a global feature.
pub fn synth_local_features<R: Rng + ?Sized>(global: &[f64], regions: usize, perturbation: f64, rng: &mut R) -> Result<Matrix> {
    if regions == 0 {
        return config("local feature map needs at least one region");
    }
    let d = global.len();
    let mut out = Matrix::zeros(regions, d);
    for r in 0..regions {
        let noise = gaussian_vec(rng, d, perturbation);
        let raw: Vec<f64> = global.iter().zip(&noise).map(|(g, n)| g + n).collect();
        let (unit, _) = numerics::normalize(&raw)?;
        out.row_mut(r).copy_from_slice(&unit);
    }
    Ok(out)
}
