//! Diversity objectives over feature expectations and the intrinsic rewards
//! derived from them (repulsive and Van der Waals variants).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExpectation;
use crate::math::{dist, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityKind {
    Repulsive,
    Vdw,
}

/// `diversity` section of the run configuration. Nearest-neighbour ties always
/// resolve to the lowest skill index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub kind: DiversityKind,
    /// Equilibrium distance of the VDW objective.
    pub ell0: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            kind: DiversityKind::Repulsive,
            ell0: 1.0,
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == DiversityKind::Vdw && !(self.ell0 > 0.0) {
            return Err(Error::Config(
                "diversity: ell0 must be positive for the vdw objective".into(),
            ));
        }
        Ok(())
    }
}

/// Closest other skill and its distance; `None` when there is only one skill.
pub fn nearest_neighbor(z: usize, fe: &FeatureExpectation) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, psi_k) in fe.psi.iter().enumerate() {
        if k == z {
            continue;
        }
        let d = dist(&fe.psi[z], psi_k);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    best
}

fn nn_distances(fe: &FeatureExpectation) -> Result<Vec<f64>> {
    if fe.num_skills() < 2 {
        return Err(Error::Domain("diversity needs at least two skills".into()));
    }
    Ok((0..fe.num_skills())
        .map(|z| nearest_neighbor(z, fe).expect("n >= 2").1)
        .collect())
}

/// Per-skill VDW term `0.5 l^2 - 0.2 l^5 / l0^3`.
pub fn vdw_term(ell: f64, ell0: f64) -> f64 {
    0.5 * ell * ell - 0.2 * ell.powi(5) / ell0.powi(3)
}

/// Scale `1 - (l / l0)^3` applied to the repulsive reward by the VDW variant.
pub fn vdw_factor(ell: f64, ell0: f64) -> f64 {
    1.0 - (ell / ell0).powi(3)
}

/// Half the sum of squared nearest-neighbour distances.
pub fn repulsive_objective(fe: &FeatureExpectation) -> Result<f64> {
    Ok(0.5 * nn_distances(fe)?.iter().map(|l| l * l).sum::<f64>())
}

pub fn vdw_objective(fe: &FeatureExpectation, ell0: f64) -> Result<f64> {
    if !(ell0 > 0.0) {
        return Err(Error::Domain("ell0 must be positive".into()));
    }
    Ok(nn_distances(fe)?.iter().map(|&l| vdw_term(l, ell0)).sum())
}

pub fn objective(fe: &FeatureExpectation, cfg: &DiversityConfig) -> Result<f64> {
    match cfg.kind {
        DiversityKind::Repulsive => repulsive_objective(fe),
        DiversityKind::Vdw => vdw_objective(fe, cfg.ell0),
    }
}

/// Weight vector `w` with `r_i(s) = <phi(s), w>` for skill `z`; zeros when `n < 2`.
pub fn intrinsic_weights(z: usize, fe: &FeatureExpectation, cfg: &DiversityConfig) -> Vec<f64> {
    let Some((star, ell)) = nearest_neighbor(z, fe) else {
        return vec![0.0; fe.dim()];
    };
    let scale = match cfg.kind {
        DiversityKind::Repulsive => 1.0,
        DiversityKind::Vdw => vdw_factor(ell, cfg.ell0),
    };
    fe.psi[z]
        .iter()
        .zip(&fe.psi[star])
        .map(|(a, b)| scale * (a - b))
        .collect()
}

pub fn intrinsic_reward(phi_s: &[f64], z: usize, fe: &FeatureExpectation, cfg: &DiversityConfig) -> f64 {
    dot(phi_s, &intrinsic_weights(z, fe, cfg))
}

/// Mean nearest-neighbour distance between feature expectations.
pub fn diversity_metric(fe: &FeatureExpectation) -> Result<f64> {
    let d = nn_distances(fe)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}
