//! Pareto-front metrics: nondominated filtering, exact two-objective
//! hypervolume, sparsity and expected utility.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pref::{utility, PreferenceVector, ReturnVector};

/// `a` dominates `b`: at least as good everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Mutually nondominated, duplicate-free return vectors in ascending
/// lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    points: Vec<ReturnVector>,
}

impl ParetoArchive {
    pub fn points(&self) -> &[ReturnVector] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Merges several archives and refilters.
    pub fn union<'a, I: IntoIterator<Item = &'a ParetoArchive>>(archives: I) -> ParetoArchive {
        let all: Vec<ReturnVector> = archives.into_iter().flat_map(|a| a.points.iter().cloned()).collect();
        nondominated(&all)
    }
}

/// Maximal mutually nondominated subset, one representative per group of
/// exact duplicates.
pub fn nondominated(points: &[ReturnVector]) -> ParetoArchive {
    let mut sorted: Vec<&ReturnVector> = points.iter().collect();
    sorted.sort_by(|a, b| lexicographic(a.values(), b.values()));
    sorted.dedup_by(|a, b| a.values() == b.values());
    // After sorting, a point can only be dominated by one later in the order.
    let keep: Vec<ReturnVector> = sorted
        .iter()
        .enumerate()
        .filter(|(i, p)| !sorted[i + 1..].iter().any(|q| dominates(q.values(), p.values())))
        .map(|(_, p)| (*p).clone())
        .collect();
    ParetoArchive { points: keep }
}

/// Area dominated by `points` and bounded below by `reference`. Points that
/// do not strictly dominate the reference in both objectives are ignored.
pub fn hypervolume2d(points: &[ReturnVector], reference: &[f64]) -> Result<f64> {
    check_dim(2, reference.len())?;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        check_dim(2, p.dim())?;
        let v = p.values();
        if v[0] > reference[0] && v[1] > reference[1] {
            pts.push((v[0], v[1]));
        }
    }
    // Sweep from the largest first objective down; each point adds the strip
    // between its x and the next one's, as tall as the best y seen so far.
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut best_y = reference[1];
    for (i, &(x, y)) in pts.iter().enumerate() {
        best_y = best_y.max(y);
        let next_x = pts.get(i + 1).map_or(reference[0], |p| p.0);
        area += (x - next_x) * (best_y - reference[1]);
    }
    Ok(area)
}

pub fn archive_hypervolume(archive: &ParetoArchive, reference: &[f64]) -> Result<f64> {
    hypervolume2d(archive.points(), reference)
}

/// Mean squared gap between consecutive sorted values, summed over
/// objectives: `1/(|P|−1) · Σ_j Σ_i (P̃_j(i) − P̃_j(i+1))²`. Zero for fewer
/// than two points.
pub fn sparsity(archive: &ParetoArchive) -> f64 {
    let n = archive.len();
    if n < 2 {
        return 0.0;
    }
    let m = archive.points[0].dim();
    let mut total = 0.0;
    for j in 0..m {
        let mut col: Vec<f64> = archive.points.iter().map(|p| p.values()[j]).collect();
        col.sort_by(f64::total_cmp);
        total += col.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
    }
    total / (n - 1) as f64
}

/// One evaluation rollout: the conditioning preference and the resulting
/// undiscounted vector return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub preference: PreferenceVector,
    pub vector_return: ReturnVector,
    pub step: u64,
    pub seed: u64,
}

/// Expected utility: mean of `wᵀG` over the records.
pub fn eum(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let mut total = 0.0;
    for r in records {
        total += utility(&r.preference, r.vector_return.values())?;
    }
    Ok(total / records.len() as f64)
}
