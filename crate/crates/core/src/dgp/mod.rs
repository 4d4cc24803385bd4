//! Synthetic worlds: specs, exact moments, samplers and assumption checks.

mod check;
mod oracle;
mod sample;
mod spec;

pub use check::{verify_assumptions, verify_binary, verify_mixture, AssumptionReport, Clause, RouteCheck, EQUALITY_TOL};
pub use oracle::{
    implied_error_mean, normal_interval, oracle_cell_variance, oracle_effects, oracle_late, oracle_mixture_moments,
    oracle_moments, oracle_outcome_dist, oracle_phi, oracle_tables, oracle_theta, pr_tstar_given_u, OracleEffects,
};
pub use sample::{simulate, simulate_stream, stream_rng, Latent, Sample};
pub use spec::{CovariateLaw, DgpSpec, DgpSpec2, DgpSpecK, NoiseLaw, DGP_SCHEMA_VERSION};

/// Bundled worlds shipped with the crate.
pub mod fixtures {
    use super::{DgpSpec, DgpSpec2, DgpSpecK};

    pub const NAMES: [&str; 8] = [
        "dgp-a",
        "dgp-b",
        "dgp-c",
        "dgp-a-x",
        "dgp-a-violating",
        "dgp-a-zirrelevant",
        "dgp-m",
        "dgp-m-nondominant",
    ];

    /// Raw JSON of a bundled fixture.
    pub fn source(name: &str) -> Option<&'static str> {
        Some(match name {
            "dgp-a" => include_str!("../../data/dgp-a.json"),
            "dgp-b" => include_str!("../../data/dgp-b.json"),
            "dgp-c" => include_str!("../../data/dgp-c.json"),
            "dgp-a-x" => include_str!("../../data/dgp-a-x.json"),
            "dgp-a-violating" => include_str!("../../data/dgp-a-violating.json"),
            "dgp-a-zirrelevant" => include_str!("../../data/dgp-a-zirrelevant.json"),
            "dgp-m" => include_str!("../../data/dgp-m.json"),
            "dgp-m-nondominant" => include_str!("../../data/dgp-m-nondominant.json"),
            _ => return None,
        })
    }

    pub fn load(name: &str) -> Option<DgpSpec> {
        source(name).map(|s| DgpSpec::from_json(s).expect("bundled fixture is valid"))
    }

    pub fn binary(name: &str) -> DgpSpec2 {
        match load(name) {
            Some(DgpSpec::Binary(s)) => s,
            _ => panic!("{name} is not a bundled binary fixture"),
        }
    }

    pub fn mixture(name: &str) -> DgpSpecK {
        match load(name) {
            Some(DgpSpec::Mixture(s)) => s,
            _ => panic!("{name} is not a bundled mixture fixture"),
        }
    }

    pub fn dgp_a() -> DgpSpec2 {
        binary("dgp-a")
    }

    pub fn dgp_m() -> DgpSpecK {
        mixture("dgp-m")
    }
}

impl DgpSpec2 {
    /// The same world written as a mixture with a single latent type.
    ///
    /// Returns `None` when the world has error offsets or a covariate, which
    /// the mixture form cannot express.
    pub fn to_mixture(&self) -> Option<DgpSpecK> {
        if self.eps_offsets.is_some_and(|o| o.iter().flatten().any(|&x| x != 0.0)) || self.covariate.is_some() {
            return None;
        }
        let pi = self.misclassification;
        Some(DgpSpecK {
            name: format!("{}-as-mixture", self.name),
            k_u: 1,
            pr_sstar: self.pr_tstar.map(|p| vec![1.0 - p, p]),
            emission: [0, 1].map(|z| vec![vec![1.0 - pi[z][0], 1.0 - pi[z][1]], vec![pi[z][0], pi[z][1]]]),
            alpha: vec![self.alpha],
            beta: vec![self.beta],
            noise: self.noise,
            pr_z_given_v: self.pr_z_given_v,
            pr_v: self.pr_v,
            partition: None,
        })
    }
}
