//! Hyperbolicity functionals, singularity classification and verdict reports.

use serde::{Deserialize, Serialize};

pub mod functionals;
pub mod msh;
pub mod periodic;
pub mod report;
pub mod singular;

pub use functionals::{
    ash_functional, mnuse_functional, nne_functional, nuse_functional, sectional_expansion_functional,
    volume_expansion_functional,
};
pub use msh::{msh_estimate, MshEstimate, MshOptions};
pub use periodic::{nush_periodic_check, PeriodicCheck, PeriodicOptions};
pub use report::{analyse_singularities, assemble_report, member_orbit, member_start, ConditionVerdict, HyperbolicityReport, ReportConfig};
pub use singular::{classify_singularity, Activity, SingularityAnalysis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Conjunction: any failure fails, otherwise any inconclusive part makes
    /// the whole inconclusive.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Pass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "PH")]
    PartialHyperbolicity,
    #[serde(rename = "SingularHyp")]
    SingularHyperbolicity,
    #[serde(rename = "SH")]
    Sectional,
    #[serde(rename = "ASH")]
    AsymptoticSectional,
    #[serde(rename = "NUSE")]
    Nuse,
    #[serde(rename = "MNUSE")]
    Mnuse,
    #[serde(rename = "NNE")]
    Nne,
    #[serde(rename = "MSH-estimate")]
    Msh,
    #[serde(rename = "NUSH-periodic")]
    NushPeriodic,
}

impl Condition {
    pub const ALL: [Condition; 9] = [
        Condition::PartialHyperbolicity,
        Condition::SingularHyperbolicity,
        Condition::Sectional,
        Condition::AsymptoticSectional,
        Condition::Nuse,
        Condition::Mnuse,
        Condition::Nne,
        Condition::Msh,
        Condition::NushPeriodic,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::PartialHyperbolicity => "PH",
            Condition::SingularHyperbolicity => "SingularHyp",
            Condition::Sectional => "SH",
            Condition::AsymptoticSectional => "ASH",
            Condition::Nuse => "NUSE",
            Condition::Mnuse => "MNUSE",
            Condition::Nne => "NNE",
            Condition::Msh => "MSH-estimate",
            Condition::NushPeriodic => "NUSH-periodic",
        }
    }

    pub fn parse(label: &str) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_conjunction() {
        use Verdict::*;
        assert_eq!(Pass.and(Pass), Pass);
        assert_eq!(Pass.and(Inconclusive), Inconclusive);
        assert_eq!(Inconclusive.and(Fail), Fail);
    }

    #[test]
    fn condition_labels_round_trip() {
        for c in Condition::ALL {
            assert_eq!(Condition::parse(c.label()), Some(c));
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.label()));
        }
        assert_eq!(Condition::parse("mnuse"), Some(Condition::Mnuse));
        assert_eq!(Condition::parse("XYZ"), None);
    }
}
