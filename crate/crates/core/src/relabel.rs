//! Preference relabeling: Dirichlet neighborhood draws around a behavior
//! preference, return-aligned relabels, and the two acceptance filters.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pref::{project_softplus_simplex, utility, PreferenceVector, ReturnVector};

/// Lower bound applied to each weight before it becomes a Dirichlet shape.
pub const SHAPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AcceptanceFilter {
    None,
    /// Accept when `cos(w̃, G) ≥ tau`.
    Cosine { tau: f64 },
    /// Accept when `w̃ᵀG ≥ wᵀG − epsilon`.
    Utility { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelabelConfig {
    /// Neighborhood relabels per environment step.
    pub k: usize,
    /// Dirichlet concentration.
    pub kappa: f64,
    /// Weight of the return-aligned target in the convex combination with
    /// the behavior preference.
    pub lambda: f64,
    pub filter: AcceptanceFilter,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            k: 4,
            kappa: 20.0,
            lambda: 1.0,
            filter: AcceptanceFilter::None,
        }
    }
}

impl RelabelConfig {
    /// Relabeling disabled: no neighborhood draws and no retained episode-end
    /// copies (the replay buffer sizes its relabeled pool by `k`).
    pub fn disabled() -> Self {
        Self {
            k: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        match self.filter {
            AcceptanceFilter::None => {}
            AcceptanceFilter::Cosine { tau } => {
                if !(tau > 0.0 && tau <= 1.0) {
                    return Err(Error::Config(format!("tau must be in (0, 1], got {tau}")));
                }
            }
            AcceptanceFilter::Utility { epsilon } => {
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
                }
            }
        }
        Ok(())
    }

    /// Applies the configured filter to a candidate relabel `candidate` of
    /// behavior preference `behavior`, judged against return `g`.
    pub fn accepts(
        &self,
        candidate: &PreferenceVector,
        behavior: &PreferenceVector,
        g: &ReturnVector,
    ) -> bool {
        match self.filter {
            AcceptanceFilter::None => true,
            AcceptanceFilter::Cosine { tau } => accept_cosine(candidate, g, tau),
            AcceptanceFilter::Utility { epsilon } => accept_utility(candidate, behavior, g, epsilon),
        }
    }
}

/// One draw from `Dir(κ·max(w, floor))` built from per-coordinate
/// `Gamma(shape, 1)` variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    w: &PreferenceVector,
    kappa: f64,
    rng: &mut R,
) -> PreferenceVector {
    let draws: Vec<f64> = w
        .weights()
        .iter()
        .map(|&wi| {
            let shape = kappa * wi.max(SHAPE_FLOOR);
            Gamma::new(shape, 1.0)
                .expect("positive finite gamma shape")
                .sample(rng)
        })
        .collect();
    // Tiny shapes can underflow every draw to zero; fall back to the centre.
    PreferenceVector::normalized(draws).unwrap_or_else(|_| w.clone())
}

/// Uniform draw from the simplex (`Dir(1, …, 1)`).
pub fn sample_uniform_simplex<R: Rng + ?Sized>(m: usize, rng: &mut R) -> PreferenceVector {
    loop {
        let draws: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        if let Ok(p) = PreferenceVector::normalized(draws) {
            return p;
        }
    }
}

/// `K` neighborhood relabels of `w`.
pub fn neighborhood_relabel<R: Rng + ?Sized>(
    w: &PreferenceVector,
    cfg: &RelabelConfig,
    rng: &mut R,
) -> Vec<PreferenceVector> {
    (0..cfg.k)
        .map(|_| sample_dirichlet(w, cfg.kappa, rng))
        .collect()
}

/// `λ·softplus-projection(G) + (1−λ)·w`, revalidated onto the simplex.
pub fn return_aligned_relabel(
    g: &ReturnVector,
    w: &PreferenceVector,
    lambda: f64,
) -> Result<PreferenceVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
    }
    crate::error::check_dim(w.dim(), g.dim())?;
    if lambda == 0.0 {
        return Ok(w.clone());
    }
    let target = project_softplus_simplex(g);
    let mixed: Vec<f64> = target
        .weights()
        .iter()
        .zip(w.weights())
        .map(|(t, b)| lambda * t + (1.0 - lambda) * b)
        .collect();
    PreferenceVector::new(mixed)
}

/// Cosine alignment filter. A zero return carries no direction and is
/// accepted.
pub fn accept_cosine(candidate: &PreferenceVector, g: &ReturnVector, tau: f64) -> bool {
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return true;
    }
    let w_norm = candidate.weights().iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot = utility(candidate, g.values()).unwrap_or(f64::NEG_INFINITY);
    dot / (w_norm * g_norm) >= tau
}

/// Utility filter: the relabel may lose at most `epsilon` utility on `G`
/// relative to the behavior preference.
pub fn accept_utility(
    candidate: &PreferenceVector,
    behavior: &PreferenceVector,
    g: &ReturnVector,
    epsilon: f64,
) -> bool {
    match (utility(candidate, g.values()), utility(behavior, g.values())) {
        (Ok(a), Ok(b)) => a >= b - epsilon,
        _ => false,
    }
}
