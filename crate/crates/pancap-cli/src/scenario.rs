//! Scenario files: one TOML document with an ordered list of periods.

use std::fs;
use std::path::Path;

use pancap::{validate_params, PeriodInput, PeriodParams, SimOptions, SolverOptions, TieBreak};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    /// `start:stop:step`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(format!("expected start:stop:step, got {s:?}"));
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(GridSpec {
            start: num(start)?,
            stop: num(stop)?,
            step: num(step)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakName {
    MoreFull,
    LowerId,
}

impl From<TieBreakName> for TieBreak {
    fn from(t: TieBreakName) -> Self {
        match t {
            TieBreakName::MoreFull => TieBreak::MoreFull,
            TieBreakName::LowerId => TieBreak::LowerId,
        }
    }
}

/// Optional `[solver]` overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_break: Option<TieBreakName>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Spanned<u32>,
    #[serde(default)]
    periods: Vec<Spanned<PeriodInput>>,
    #[serde(default)]
    solver: Option<SolverBlock>,
}

#[derive(Serialize)]
struct ScenarioOut<'a> {
    schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<&'a SolverBlock>,
    periods: Vec<PeriodInput>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub periods: Vec<PeriodParams>,
    pub solver: SolverBlock,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, CliError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string().trim_end().into()))?;
        let version = raw.schema_version.get_ref();
        if *version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "line {}: schema_version: expected {SCHEMA_VERSION}, found {version}",
                line_of(text, raw.schema_version.span().start)
            )));
        }
        if raw.periods.is_empty() {
            return Err(CliError::Schema("periods: at least one [[periods]] table is required".into()));
        }
        let periods = raw
            .periods
            .iter()
            .enumerate()
            .map(|(i, p)| {
                validate_params(p.get_ref()).map_err(|e| {
                    CliError::Schema(format!("line {}: periods[{i}]: {e}", line_of(text, p.span().start)))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let solver = raw.solver.unwrap_or_default();
        if let Some(tol) = solver.tolerance {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(CliError::Schema(format!("solver.tolerance: expected a value in (0, 1), got {tol}")));
            }
        }
        Ok(Scenario { periods, solver })
    }

    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text).map_err(|e| match e {
            CliError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical text form; parsing it gives back an identical scenario.
    pub fn export(&self) -> String {
        let out = ScenarioOut {
            schema_version: SCHEMA_VERSION,
            solver: (self.solver != SolverBlock::default()).then_some(&self.solver),
            periods: self.periods.iter().map(PeriodParams::to_input).collect(),
        };
        toml::to_string(&out).expect("scenario serialises")
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        if let Some(tol) = self.solver.tolerance {
            opts.tolerance = tol;
        }
        if let Some(t) = self.solver.tie_break {
            opts.tie_break = t.into();
        }
        opts
    }

    pub fn sim_options(&self) -> SimOptions {
        let mut opts = SimOptions::default();
        if let Some(dt) = self.solver.dt {
            opts.dt = dt;
        }
        if let Some(h) = self.solver.horizon {
            opts.horizon = h;
        }
        opts
    }

    /// The single period of a one-period scenario.
    pub fn single(&self) -> Result<&PeriodParams, CliError> {
        match self.periods.as_slice() {
            [p] => Ok(p),
            ps => Err(CliError::Schema(format!(
                "expected a one-period scenario, found {} periods",
                ps.len()
            ))),
        }
    }
}
