use serde::{Deserialize, Serialize};

/// Numerical thresholds for the identification routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest accepted condition number of a moment matrix.
    pub max_cond: f64,
    /// Smallest accepted gap between eigenvalues.
    pub eig_gap: f64,
    /// Smallest accepted gap between the second-row entries used for labeling.
    pub label: f64,
    /// Width of the clamping window around `[0, 1]` for recovered probabilities.
    pub prob: f64,
    /// Negative discriminants (or imaginary parts) up to this size count as zero.
    pub disc: f64,
    /// Largest accepted disagreement between the `Z = 0` and `Z = 1` reconstructions.
    pub cross: f64,
    /// Smallest accepted `|Pr(T*=1|1,v) - Pr(T*=1|0,v)|`.
    pub relevance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::identification()
    }
}

impl Tolerances {
    /// Thresholds for exact population moments.
    pub const fn identification() -> Self {
        Tolerances {
            max_cond: 1e8,
            eig_gap: 1e-10,
            label: 1e-10,
            prob: 1e-6,
            disc: 1e-12,
            cross: 1e-7,
            relevance: 1e-10,
        }
    }

    /// Looser thresholds for moments estimated from a sample.
    pub const fn estimation() -> Self {
        Tolerances {
            max_cond: 1e10,
            eig_gap: 1e-8,
            label: 1e-8,
            prob: 0.05,
            disc: 1e-6,
            cross: 0.05,
            relevance: 1e-8,
        }
    }
}
