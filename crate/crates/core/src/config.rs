//! Scenario configuration: one experiment per TOML document.
//!
//! The schema is documented in the repository README. Every section except
//! `model`, `curves` and `utility` has defaults matching the case study.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{CurveSpec, ScalarFn};
use crate::dividend::{DividendModel, GbmParams, ReversalVariant};
use crate::error::{Error, Result};
use crate::preferences::Utility;
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound = "")]
pub enum ModelSpec<F: Scalar> {
    Gbm { mu: F, sigma: F, d0: F },
    General { drift: ScalarFn<F>, volatility: ScalarFn<F>, d0: F },
}

impl<F: Scalar> ModelSpec<F> {
    pub fn dividend_model(&self) -> DividendModel<F> {
        match self {
            ModelSpec::Gbm { mu, sigma, d0 } => DividendModel {
                drift: ScalarFn::constant(*mu),
                volatility: ScalarFn::constant(*sigma),
                initial_level: *d0,
            },
            ModelSpec::General { drift, volatility, d0 } => DividendModel {
                drift: drift.clone(),
                volatility: volatility.clone(),
                initial_level: *d0,
            },
        }
    }

    pub fn gbm(&self) -> Option<GbmParams<F>> {
        self.dividend_model().as_gbm()
    }

    pub fn d0(&self) -> F {
        match self {
            ModelSpec::Gbm { d0, .. } | ModelSpec::General { d0, .. } => *d0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct Curves<F: Scalar> {
    pub intensity: CurveSpec<F>,
    pub rate: CurveSpec<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct Recovery<F: Scalar> {
    pub epsilon: F,
    /// Recovery values swept by the case-study command.
    #[serde(default)]
    pub sweep: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct InvestorSpec<F: Scalar> {
    pub gamma: F,
    pub initial_wealth: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct McSettings<F: Scalar> {
    pub n_paths: usize,
    /// Time steps over the full horizon; interior starts keep the step size.
    pub n_steps: usize,
    pub seed: u64,
    /// Relative spatial bump for central differences.
    pub bump: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct Grids<F: Scalar> {
    pub x: Vec<F>,
    pub t: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantChoice {
    /// Pick the variant that agrees best with the forward-regression oracle.
    Auto,
    Standard,
    ClosedForm,
}

impl VariantChoice {
    pub fn fixed(self) -> Option<ReversalVariant> {
        match self {
            VariantChoice::Auto => None,
            VariantChoice::Standard => Some(ReversalVariant::Standard),
            VariantChoice::ClosedForm => Some(ReversalVariant::ClosedForm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct ReversalSettings<F: Scalar> {
    pub variant: VariantChoice,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Grid on which `g` and `φ·g` are tabulated: a list, or a table
    /// `{ from, to, points }` for log-spaced points.
    #[serde(deserialize_with = "grid_or_log_spec")]
    pub x_grid: Vec<F>,
    /// Paths per drift anchor for the forward-regression oracle.
    pub oracle_paths: usize,
    /// Kernel bandwidth on `log D_T`; Silverman's rule when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct PdeSettings<F: Scalar> {
    pub x_min: F,
    pub x_max: F,
    pub n_x: usize,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct ValidationSettings<F: Scalar> {
    /// Smallest admissible `|P_pre - ε|` for the systemic measures.
    pub systemic_floor: F,
    /// Marks a config whose systemic denominator is meant to be degenerate.
    #[serde(default)]
    pub expect_degenerate_systemic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct ScenarioConfig<F: Scalar> {
    pub schema_version: u32,
    pub horizon: F,
    pub model: ModelSpec<F>,
    pub curves: Curves<F>,
    pub utility: Utility<F>,
    pub recovery: Recovery<F>,
    #[serde(default)]
    pub investors: Vec<InvestorSpec<F>>,
    pub mc: McSettings<F>,
    pub grids: Grids<F>,
    pub reversal: ReversalSettings<F>,
    pub pde: PdeSettings<F>,
    pub validation: ValidationSettings<F>,
    pub outputs: Outputs,
}

#[derive(Deserialize)]
#[serde(untagged, bound = "")]
enum GridInput<F: Scalar> {
    Points(Vec<F>),
    LogSpaced(LogSpec<F>),
}

#[derive(Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct LogSpec<F: Scalar> {
    from: F,
    to: F,
    points: usize,
}

fn grid_or_log_spec<'de, D, F>(d: D) -> std::result::Result<Vec<F>, D::Error>
where
    D: serde::Deserializer<'de>,
    F: Scalar,
{
    use serde::de::Error as _;
    match GridInput::<F>::deserialize(d)? {
        GridInput::Points(v) => Ok(v),
        GridInput::LogSpaced(s) => {
            if !(s.from > F::zero() && s.to > s.from) || s.points < 2 {
                return Err(D::Error::custom("log-spaced grid needs 0 < from < to and points >= 2"));
            }
            Ok(log_spaced(s.from, s.to, s.points))
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_spaced<F: Scalar>(lo: F, hi: F, n: usize) -> Vec<F> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * F::from_count(i) / F::from_count(n - 1)).exp()
            }
        })
        .collect()
}

impl<F: Scalar> ScenarioConfig<F> {
    /// The case study: GBM(-0.2, 0.3) from 1, `r = 0.03`, `λ(x) = 9e^{-x}`,
    /// log utility, `T = 1`, recovery sweep {0.25, 0.5, 0.75}.
    pub fn case_study() -> Self {
        let l = F::lit;
        Self {
            schema_version: SCHEMA_VERSION,
            horizon: l(1.0),
            model: ModelSpec::Gbm {
                mu: l(-0.2),
                sigma: l(0.3),
                d0: l(1.0),
            },
            curves: Curves {
                intensity: CurveSpec::exp_decay(l(9.0), l(1.0)),
                rate: CurveSpec::constant(l(0.03)),
            },
            utility: Utility::Log,
            recovery: Recovery {
                epsilon: l(0.5),
                sweep: vec![l(0.25), l(0.5), l(0.75)],
            },
            investors: vec![
                InvestorSpec { gamma: l(1.0), initial_wealth: l(1.0) },
                InvestorSpec { gamma: l(0.8), initial_wealth: l(1.0) },
                InvestorSpec { gamma: l(0.5), initial_wealth: l(1.0) },
            ],
            mc: McSettings {
                n_paths: 500_000,
                n_steps: 100,
                seed: 20_240_601,
                bump: l(0.01),
            },
            grids: Grids {
                x: vec![l(0.5), l(0.75), l(1.0), l(1.5), l(2.0)],
                t: vec![l(0.0), l(0.2), l(0.4), l(0.6), l(0.8)],
            },
            reversal: ReversalSettings {
                variant: VariantChoice::Auto,
                n_paths: 40_000,
                n_steps: 200,
                x_grid: log_spaced(l(0.2), l(12.0), 40),
                oracle_paths: 100_000,
                bandwidth: Some(l(0.02)),
            },
            pde: PdeSettings {
                x_min: l(0.05),
                x_max: l(20.0),
                n_x: 200,
                n_t: 200,
            },
            validation: ValidationSettings {
                systemic_floor: l(5e-3),
                expect_degenerate_systemic: false,
            },
            outputs: Outputs {
                dir: "out".into(),
                cache_dir: None,
            },
        }
    }

    /// Case-study dynamics with the pro-cyclical intensity `2(1 - e^{-x})`.
    pub fn procyclical() -> Self {
        let mut c = Self::case_study();
        c.curves.intensity = CurveSpec::saturating(F::lit(2.0), F::one());
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn content_hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn dividend_model(&self) -> DividendModel<F> {
        self.model.dividend_model()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.horizon > F::zero()) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        let model = self.dividend_model();
        model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let ModelSpec::Gbm { sigma, .. } = self.model {
            if !(sigma > F::zero()) {
                return bad(format!("model.sigma {sigma} must be positive"));
            }
        }
        self.utility.validate().map_err(|e| Error::Config(e.to_string()))?;
        let eps_ok = |e: F| e > F::zero() && e < F::one();
        if !eps_ok(self.recovery.epsilon) {
            return bad(format!("recovery.epsilon {} outside (0, 1)", self.recovery.epsilon));
        }
        if let Some(e) = self.recovery.sweep.iter().find(|&&e| !eps_ok(e)) {
            return bad(format!("recovery.sweep value {e} outside (0, 1)"));
        }
        for (i, inv) in self.investors.iter().enumerate() {
            if !(inv.gamma > F::zero() && inv.gamma <= F::one()) {
                return bad(format!("investors[{i}].gamma {} outside (0, 1]", inv.gamma));
            }
            if !(inv.initial_wealth > F::zero()) {
                return bad(format!("investors[{i}].initial_wealth must be positive"));
            }
        }
        if self.mc.n_paths < 2 || self.mc.n_steps == 0 {
            return bad("mc.n_paths must be >= 2 and mc.n_steps >= 1".into());
        }
        if !(self.mc.bump > F::zero() && self.mc.bump < F::lit(0.5)) {
            return bad(format!("mc.bump {} outside (0, 0.5)", self.mc.bump));
        }
        if self.grids.x.is_empty() || self.grids.x.iter().any(|&x| !(x > F::zero())) {
            return bad("grids.x must be nonempty and positive".into());
        }
        if self.grids.t.iter().any(|&t| t < F::zero() || t >= self.horizon) {
            return bad("grids.t entries must lie in [0, horizon)".into());
        }
        if self.reversal.n_paths < 2 || self.reversal.n_steps < 2 || self.reversal.oracle_paths < 2 {
            return bad("reversal path and step counts too small".into());
        }
        if self.reversal.x_grid.windows(2).any(|w| !(w[1] > w[0]))
            || self.reversal.x_grid.iter().any(|&x| !(x > F::zero()))
        {
            return bad("reversal.x_grid must be positive and strictly increasing".into());
        }
        if let Some(h) = self.reversal.bandwidth {
            if !(h > F::zero()) {
                return bad("reversal.bandwidth must be positive".into());
            }
        }
        if !(self.pde.x_min > F::zero() && self.pde.x_max > self.pde.x_min) {
            return bad("pde domain must satisfy 0 < x_min < x_max".into());
        }
        if self.pde.n_x < 16 || self.pde.n_t == 0 {
            return bad("pde.n_x must be >= 16 and pde.n_t >= 1".into());
        }
        let mut scan: Vec<F> = self.grids.x.clone();
        scan.extend_from_slice(&self.reversal.x_grid);
        scan.sort_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
        scan.dedup();
        self.curves
            .intensity
            .check_nonnegative_on(&scan)
            .map_err(|e| Error::Config(format!("curves.intensity: {e}")))?;
        self.curves
            .intensity
            .certify(&scan)
            .map_err(|e| Error::Config(format!("curves.intensity: {e}")))?;
        self.curves
            .rate
            .certify(&scan)
            .map_err(|e| Error::Config(format!("curves.rate: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ScenarioConfig::<f64>::case_study();
        let s = c.to_toml_string().unwrap();
        let back = ScenarioConfig::<f64>::from_toml_str(&s).unwrap();
        assert_eq!(c, back);
        assert_eq!(back.to_toml_string().unwrap(), s);
    }

    #[test]
    fn general_model_round_trips() {
        let mut c = ScenarioConfig::<f64>::case_study();
        c.model = ModelSpec::General {
            drift: ScalarFn::Linear { intercept: 0.05, slope: -0.02 },
            volatility: ScalarFn::constant(0.25),
            d0: 1.0,
        };
        let s = c.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::<f64>::from_toml_str(&s).unwrap(), c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let s = ScenarioConfig::<f64>::case_study().to_toml_string().unwrap();
        let broken = s.replacen("n_paths = 500000", "n_pathz = 500000", 1);
        let err = ScenarioConfig::<f64>::from_toml_str(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("n_pathz"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = ScenarioConfig::<f64>::case_study();
        c.recovery.epsilon = 1.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::<f64>::case_study();
        c.grids.t.push(1.0);
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::<f64>::case_study();
        c.curves.intensity.cyclicality = crate::curve::Cyclicality::Pro;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::<f64>::case_study();
        c.schema_version = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_spaced_grid_table() {
        let text = ScenarioConfig::<f64>::case_study().to_toml_string().unwrap();
        let start = text.find("x_grid = [").unwrap();
        let end = start + text[start..].find(']').unwrap() + 1;
        let short = format!("{}x_grid = {{ from = 0.2, to = 12.0, points = 40 }}{}", &text[..start], &text[end..]);
        let c = ScenarioConfig::<f64>::from_toml_str(&short).unwrap();
        assert_eq!(c.reversal.x_grid, log_spaced(0.2, 12.0, 40));
        let bad = short.replace("points = 40", "points = 1");
        assert!(ScenarioConfig::<f64>::from_toml_str(&bad).is_err());
    }

    #[test]
    fn log_spacing_hits_endpoints() {
        let g = log_spaced(0.2, 12.0, 40);
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 0.2);
        assert_eq!(g[39], 12.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ScenarioConfig::<f64>::case_study();
        let mut b = a.clone();
        b.mc.seed += 1;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert_eq!(a.content_hash().unwrap(), a.clone().content_hash().unwrap());
    }
}
