//! Method names of the ablation grid, e.g. `GP+UCB+OPE` or `Ind+Uniform+NoOPE`.

use std::fmt;
use std::str::FromStr;

use aops_core::selection::{AcquisitionStrategy, ModelKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Ucb,
    Uniform,
    EpsilonGreedy,
    Ei,
}

impl Strategy {
    fn name(self) -> &'static str {
        match self {
            Strategy::Ucb => "UCB",
            Strategy::Uniform => "Uniform",
            Strategy::EpsilonGreedy => "EpsilonGreedy",
            Strategy::Ei => "EI",
        }
    }

    pub fn acquisition(self, beta_sqrt: f64, epsilon: f64) -> AcquisitionStrategy {
        match self {
            Strategy::Ucb => AcquisitionStrategy::Ucb { beta_sqrt },
            Strategy::Uniform => AcquisitionStrategy::Uniform,
            Strategy::EpsilonGreedy => AcquisitionStrategy::EpsilonGreedy { epsilon },
            Strategy::Ei => AcquisitionStrategy::ExpectedImprovement,
        }
    }
}

/// One column of an experiment: either an active-selection configuration or
/// the offline baseline that recommends the best OPE estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    OpeOnly,
    Active {
        model: ModelKind,
        strategy: Strategy,
        use_ope: bool,
    },
}

impl Method {
    pub const fn active(model: ModelKind, strategy: Strategy, use_ope: bool) -> Self {
        Method::Active {
            model,
            strategy,
            use_ope,
        }
    }

    pub fn uses_ope(&self) -> bool {
        match self {
            Method::OpeOnly => true,
            Method::Active { use_ope, .. } => *use_ope,
        }
    }

    /// The eight GP|Ind × UCB|Uniform × OPE|NoOPE combinations.
    pub fn ablation_grid() -> Vec<Method> {
        let mut out = Vec::new();
        for model in [ModelKind::Gp, ModelKind::Ind] {
            for strategy in [Strategy::Ucb, Strategy::Uniform] {
                for use_ope in [true, false] {
                    out.push(Method::active(model, strategy, use_ope));
                }
            }
        }
        out
    }

    /// Name safe to use as a file stem.
    pub fn file_stem(&self) -> String {
        self.to_string().replace('+', "_")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::OpeOnly => f.write_str("OPE"),
            Method::Active {
                model,
                strategy,
                use_ope,
            } => {
                let model = match model {
                    ModelKind::Gp => "GP",
                    ModelKind::Ind => "Ind",
                };
                let ope = if *use_ope { "OPE" } else { "NoOPE" };
                write!(f, "{model}+{}+{ope}", strategy.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method `{0}`; expected OPE or MODEL+STRATEGY[+OPE|+NoOPE] with MODEL in GP, Ind and STRATEGY in UCB, Uniform, EpsilonGreedy, EI")]
pub struct ParseMethodError(String);

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMethodError(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ope" | "ope-only" => return Ok(Method::OpeOnly),
            "a-ops" => return Ok(Method::active(ModelKind::Gp, Strategy::Ucb, true)),
            _ => {}
        }
        let parts: Vec<&str> = lower.split('+').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(err());
        }
        let model = match parts[0] {
            "gp" => ModelKind::Gp,
            "ind" => ModelKind::Ind,
            _ => return Err(err()),
        };
        let strategy = match parts[1] {
            "ucb" => Strategy::Ucb,
            "uniform" => Strategy::Uniform,
            "epsilongreedy" | "epsilon-greedy" | "egreedy" => Strategy::EpsilonGreedy,
            "ei" => Strategy::Ei,
            _ => return Err(err()),
        };
        let use_ope = match parts.get(2).copied() {
            None | Some("noope") => false,
            Some("ope") => true,
            Some(_) => return Err(err()),
        };
        Ok(Method::active(model, strategy, use_ope))
    }
}

impl TryFrom<String> for Method {
    type Error = ParseMethodError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}
