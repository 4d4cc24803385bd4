use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome partition `Δ_1 = (-∞, c_1]`, `Δ_j = (c_{j-1}, c_j]`, `Δ_M = (c_{M-1}, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    cuts: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    cuts: Vec<f64>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.cuts)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr { cuts: p.cuts }
    }
}

impl Partition {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("partition cut points must be finite".into()));
        }
        if cuts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("partition cut points must be strictly increasing".into()));
        }
        Ok(Partition { cuts })
    }

    /// The trivial partition with one interval.
    pub fn whole_line() -> Self {
        Partition { cuts: Vec::new() }
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    /// Number of intervals.
    pub fn len(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the interval containing `y`.
    pub fn locate(&self, y: f64) -> usize {
        self.cuts.partition_point(|&c| c < y)
    }

    /// `(lower, upper]` bounds of interval `j`, infinite at the ends.
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { f64::NEG_INFINITY } else { self.cuts[j - 1] };
        let hi = self.cuts.get(j).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cut points at the `j/K` type-7 quantiles of `y`, `j = 1..K-1`.
///
/// Tied quantiles are nudged upward to the next representable value so the
/// cuts stay strictly increasing.
pub fn build_partition(y: &[f64], k: usize) -> Result<Partition> {
    quantile_partition(y, k, 0.0)
}

/// Quantile partition at levels `(j + offset)/K`; `offset` in `(-1, 1)`.
pub fn quantile_partition(y: &[f64], k: usize, offset: f64) -> Result<Partition> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("outcome sample".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if sorted.is_empty() || distinct < k {
        return Err(Error::TooFewDistinctValues { distinct: if sorted.is_empty() { 0 } else { distinct }, needed: k });
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(k.saturating_sub(1));
    for j in 1..k {
        let p = ((j as f64 + offset) / k as f64).clamp(0.0, 1.0);
        let mut c = quantile_sorted(&sorted, p);
        if let Some(&prev) = cuts.last() {
            if c <= prev {
                c = prev.next_up();
            }
        }
        cuts.push(c);
    }
    Partition::new(cuts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_four_points() {
        let p = build_partition(&[4.0, 2.0, 1.0, 3.0], 4).unwrap();
        assert_eq!(p.cuts(), &[1.75, 2.5, 3.25]);
    }

    #[test]
    fn constant_sample_is_rejected() {
        assert!(matches!(
            build_partition(&[1.0; 10], 4),
            Err(Error::TooFewDistinctValues { distinct: 1, needed: 4 })
        ));
    }

    #[test]
    fn ties_are_nudged_apart() {
        let y = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
        let p = build_partition(&y, 3).unwrap();
        assert!(p.cuts()[0] < p.cuts()[1]);
    }

    #[test]
    fn locate_uses_right_closed_intervals() {
        let p = Partition::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(p.locate(-1.0), 0);
        assert_eq!(p.locate(0.0), 0);
        assert_eq!(p.locate(0.5), 1);
        assert_eq!(p.locate(1.0), 1);
        assert_eq!(p.locate(7.0), 2);
        assert_eq!(p.bounds(2), (1.0, f64::INFINITY));
    }
}
