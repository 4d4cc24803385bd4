use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::identk::partition::Partition;
use crate::moments::CellIndex;

use super::oracle::{implied_error_mean, oracle_outcome_dist, pr_tstar_given_u};
use super::spec::{DgpSpec, DgpSpec2, DgpSpecK};

/// Equality clauses hold when their deviation is at most this.
pub const EQUALITY_TOL: f64 = 1e-12;

/// One checked condition.
///
/// For inequality clauses `margin` is the slack (positive means the clause
/// holds); for equality clauses it is the absolute deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub id: String,
    pub condition: String,
    pub holds: bool,
    pub margin: f64,
}

/// A set of clauses under which one identification route applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCheck {
    pub route: String,
    pub clauses: Vec<String>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub spec: String,
    pub clauses: Vec<Clause>,
    pub routes: Vec<RouteCheck>,
    /// Cross-ratio eigenvalues, one per latent state.
    pub cross_ratios: Vec<f64>,
    /// `E[ε|z,v]` per cell (binary worlds).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub implied_error_mean: Option<[f64; 4]>,
}

impl AssumptionReport {
    pub fn clause(&self, id: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.id == id)
    }

    /// True when at least one identification route has all its clauses.
    pub fn all_pass(&self) -> bool {
        self.routes.iter().any(|r| r.holds)
    }

    fn add_route(&mut self, route: &str, ids: &[&str]) {
        let holds = ids.iter().all(|id| self.clause(id).is_some_and(|c| c.holds));
        self.routes.push(RouteCheck {
            route: route.into(),
            clauses: ids.iter().map(|s| s.to_string()).collect(),
            holds,
        });
    }
}

fn slack(id: &str, condition: &str, margin: f64) -> Clause {
    Clause { id: id.into(), condition: condition.into(), holds: margin > 0.0, margin }
}

fn equality(id: &str, condition: &str, deviation: f64) -> Clause {
    Clause { id: id.into(), condition: condition.into(), holds: deviation <= EQUALITY_TOL, margin: deviation }
}

pub fn verify_assumptions(spec: &DgpSpec) -> AssumptionReport {
    match spec {
        DgpSpec::Binary(s) => verify_binary(s),
        DgpSpec::Mixture(s) => verify_mixture(s),
    }
}

/// Cross ratio `p(0,0) p(1,1) / (p(1,0) p(0,1))` of a per-cell probability.
fn cross_ratio(p: impl Fn(CellIndex) -> f64) -> f64 {
    let c = CellIndex::new;
    p(c(0, 0)) * p(c(1, 1)) / (p(c(1, 0)) * p(c(0, 1)))
}

fn min_pairwise_gap(xs: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            gap = gap.min((xs[i] - xs[j]).abs());
        }
    }
    gap
}

pub fn verify_binary(spec: &DgpSpec2) -> AssumptionReport {
    let p = |c: CellIndex| spec.pr_tstar_at(c);
    let pi = spec.misclassification;
    let mut clauses = Vec::new();

    let interior = spec.pr_tstar.iter().map(|&q| q.min(1.0 - q)).fold(f64::INFINITY, f64::min);
    clauses.push(slack("interior_mixing", "0 < Pr(T*=1|z,v) < 1", interior));

    let z_gap = (0..2)
        .map(|v| (p(CellIndex::new(1, v)) - p(CellIndex::new(0, v))).abs())
        .fold(f64::INFINITY, f64::min);
    clauses.push(slack("instrument_relevance", "Pr(T*=1|Z=0,v) != Pr(T*=1|Z=1,v) for each v", z_gap));

    let v_gap = (0..2)
        .map(|z| (p(CellIndex::new(z, 1)) - p(CellIndex::new(z, 0))).abs())
        .fold(f64::INFINITY, f64::min);
    clauses.push(slack("covariate_relevance", "Pr(T*=1|z,V=0) != Pr(T*=1|z,V=1) for each z", v_gap));

    let informative = (0..2)
        .map(|z| pi[z][0].min(pi[z][1] - pi[z][0]).min(1.0 - pi[z][1]))
        .fold(f64::INFINITY, f64::min);
    clauses.push(slack("report_informative", "0 < Pr(T=1|T*=0,z) < Pr(T=1|T*=1,z) < 1", informative));

    let separation = (0..2u8)
        .map(|v| (spec.beta[v as usize] - (spec.offset(v, 0) - spec.offset(v, 1))).abs())
        .fold(f64::INFINITY, f64::min);
    clauses.push(slack("outcome_separation", "beta(v) != E[e|T*=0,v] - E[e|T*=1,v]", separation));

    let ratios = vec![cross_ratio(|c| 1.0 - p(c)), cross_ratio(p)];
    clauses.push(slack(
        "cross_ratio_distinct",
        "cross ratio of Pr(T*=0|z,v) differs from that of Pr(T*=1|z,v)",
        (ratios[0] - ratios[1]).abs(),
    ));

    let v_dev = (0..2)
        .map(|z| (p(CellIndex::new(z, 1)) - p(CellIndex::new(z, 0))).abs())
        .fold(0.0, f64::max);
    clauses.push(equality("mixing_free_of_v", "Pr(T*=1|z,v) = Pr(T*=1|z)", v_dev));

    let z_dev = (0..2).map(|t| (pi[1][t] - pi[0][t]).abs()).fold(0.0, f64::max);
    clauses.push(equality("report_free_of_z", "Pr(T=1|T*,z) = Pr(T=1|T*)", z_dev));

    let eps = implied_error_mean(spec);
    let eps_dev = eps.iter().map(|e| e.abs()).fold(0.0, f64::max);
    clauses.push(equality("error_mean_exogeneity", "E[e|z,v] = 0", eps_dev));

    let mut report = AssumptionReport {
        spec: spec.name.clone(),
        clauses,
        routes: Vec::new(),
        cross_ratios: ratios,
        implied_error_mean: Some(eps),
    };
    let common = ["interior_mixing", "instrument_relevance", "report_informative", "outcome_separation", "error_mean_exogeneity"];
    let prop1: Vec<&str> = common.iter().copied().chain(["covariate_relevance", "cross_ratio_distinct"]).collect();
    let prop2: Vec<&str> = common.iter().copied().chain(["mixing_free_of_v", "report_free_of_z"]).collect();
    report.add_route("prop1", &prop1);
    report.add_route("prop2", &prop2);
    report
}

pub fn verify_mixture(spec: &DgpSpecK) -> AssumptionReport {
    let k = spec.k();
    let mut clauses = Vec::new();

    let mut relevance = f64::INFINITY;
    for u in 0..spec.k_u {
        for v in 0..2 {
            let d = pr_tstar_given_u(spec, u, CellIndex::new(1, v)) - pr_tstar_given_u(spec, u, CellIndex::new(0, v));
            relevance = relevance.min(d.abs());
        }
    }
    clauses.push(slack(
        "instrument_relevance_by_type",
        "Pr(T*=1|u,Z=0,v) != Pr(T*=1|u,Z=1,v) for each (u,v)",
        relevance,
    ));

    let mut dominance = f64::INFINITY;
    for a in &spec.emission {
        for s in 0..k {
            for s2 in (0..k).filter(|&s2| s2 != s) {
                dominance = dominance.min(a[s][s] - a[s2][s]);
            }
        }
    }
    clauses.push(slack("report_dominance", "Pr(S=s|S*=s,z) > Pr(S=s'|S*=s,z) for s' != s", dominance));

    let positive = spec.pr_sstar.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    clauses.push(slack("mixing_positive", "Pr(S*=s|z,v) > 0", positive));

    let ratios: Vec<f64> = (0..k).map(|s| cross_ratio(|c| spec.pr_sstar[c.position()][s])).collect();
    clauses.push(slack("cross_ratio_distinct", "cross ratios of Pr(S*=s|z,v) are pairwise distinct", min_pairwise_gap(&ratios)));

    let rank = match Partition::new(spec.partition_cuts()) {
        Ok(part) if part.len() == k => (0..2u8)
            .map(|v| {
                let dist = oracle_outcome_dist(spec, &part, v);
                let ly = DMatrix::from_fn(k, k, |i, j| if i == 0 { 1.0 } else { dist[i - 1][j] });
                ly.singular_values().min()
            })
            .fold(f64::INFINITY, f64::min),
        _ => 0.0,
    };
    clauses.push(slack("outcome_rank", "L_Y(v) built on the partition is nonsingular (smallest singular value)", rank));

    // Disturbances are drawn independently of (U*, Z, V), so both exclusion forms hold exactly.
    clauses.push(equality("outcome_exclusion", "E[eta_0|U*,V] = E[eta_0|U*,Z,V]", 0.0));

    let mut report = AssumptionReport {
        spec: spec.name.clone(),
        clauses,
        routes: Vec::new(),
        cross_ratios: ratios,
        implied_error_mean: None,
    };
    report.add_route(
        "mixture",
        &[
            "instrument_relevance_by_type",
            "report_dominance",
            "mixing_positive",
            "cross_ratio_distinct",
            "outcome_rank",
            "outcome_exclusion",
        ],
    );
    report
}
