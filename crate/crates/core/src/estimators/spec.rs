use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::{MiceParams, Strategy};
use crate::nuisance::{ForestParams, DEFAULT_MC_DRAWS};

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let t = s.trim().to_ascii_lowercase();
                $(if t == $text { return Ok($name::$variant); })+
                let known: Vec<&str> = vec![$($text),+];
                Err(Error::Config(format!(
                    "unknown {} `{s}` (expected one of {})",
                    stringify!($name).to_ascii_lowercase(),
                    known.join(", ")
                )))
            }
        }
    };
}

string_enum!(Estimator {
    Dm => "dm",
    Ipsw => "ipsw",
    Co => "co",
    Aipsw => "aipsw",
    Cw => "cw",
});

string_enum!(Engine {
    Parametric => "parametric",
    Forest => "forest",
});

string_enum!(Handler {
    None => "none",
    Cc => "cc",
    WiMi => "wi-mi",
    AhMi => "ah-mi",
    FeMi => "fe-mi",
    Em => "em",
    Mia => "mia",
});

string_enum!(Moments {
    First => "first",
    FirstSecond => "first-second",
});

impl Handler {
    pub fn imputation_strategy(self) -> Option<Strategy> {
        match self {
            Handler::WiMi => Some(Strategy::Wi),
            Handler::AhMi => Some(Strategy::Ah),
            Handler::FeMi => Some(Strategy::Fe),
            _ => None,
        }
    }

    /// Handlers whose nuisances are fitted directly on the masked covariates.
    pub fn is_star(self) -> bool {
        matches!(self, Handler::Em | Handler::Mia)
    }
}

/// One estimator together with its nuisance engine and missing-value handler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub estimator: Estimator,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "default_handler")]
    pub handler: Handler,
    #[serde(default)]
    pub stabilized: bool,
    #[serde(default = "default_moments")]
    pub moments: Moments,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub mice: MiceParams,
    #[serde(default = "default_draws")]
    pub em_draws: usize,
    /// Bootstrap resamples per completed dataset for the within-imputation
    /// variance; 0 pools point estimates only.
    #[serde(default = "default_pooling_bootstrap")]
    pub pooling_bootstrap: usize,
    /// Constant trial treatment propensity `P(A = 1)`.
    #[serde(default = "default_propensity")]
    pub propensity: f64,
}

fn default_engine() -> Engine {
    Engine::Parametric
}
fn default_handler() -> Handler {
    Handler::None
}
fn default_moments() -> Moments {
    Moments::First
}
fn default_draws() -> usize {
    DEFAULT_MC_DRAWS
}
fn default_pooling_bootstrap() -> usize {
    50
}
fn default_propensity() -> f64 {
    0.5
}

impl MethodSpec {
    pub fn new(estimator: Estimator, engine: Engine, handler: Handler) -> Self {
        Self {
            estimator,
            engine,
            handler,
            stabilized: false,
            moments: Moments::First,
            forest: ForestParams::default(),
            mice: MiceParams::default(),
            em_draws: DEFAULT_MC_DRAWS,
            pooling_bootstrap: default_pooling_bootstrap(),
            propensity: default_propensity(),
        }
    }

    /// `estimator/handler/engine`, the identifier used in result tables.
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.estimator, self.handler, self.engine)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.handler, self.engine) {
            (Handler::Em, Engine::Forest) => {
                return Err(Error::Spec("the EM handler requires the parametric engine".into()))
            }
            (Handler::Mia, Engine::Parametric) => {
                return Err(Error::Spec("the MIA handler requires the forest engine".into()))
            }
            _ => {}
        }
        if self.estimator == Estimator::Cw && self.handler.is_star() {
            return Err(Error::Spec(format!(
                "calibration weighting is not defined on incomplete covariates (handler `{}`)",
                self.handler
            )));
        }
        if self.handler.imputation_strategy().is_some() && self.mice.imputations == 0 {
            return Err(Error::Spec("multiple imputation needs at least one imputation".into()));
        }
        if self.em_draws == 0 {
            return Err(Error::Spec("EM needs at least one Monte-Carlo draw".into()));
        }
        super::weighting::check_propensity(self.propensity)?;
        self.forest.validate()
    }
}
