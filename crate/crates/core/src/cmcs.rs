//! The conditional Markov chain search executor. A configuration is a pool
//! of components plus two row-stochastic transition matrices; after each
//! component application the next component is drawn from the current one's
//! success row when the objective strictly improved and from its failure row
//! otherwise. The working solution is never rolled back; only the incumbent
//! snapshot tracks the best value seen.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

use crate::components::{ComponentParseError, ComponentSpec};
use crate::instance::Instance;
use crate::solution::{RankMatrix, SolutionError, SolutionState};
use crate::Money;

/// Row sums may deviate from 1 by at most this much.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("expected header \"cmcs-config 1\", found \"{0}\"")]
    BadHeader(String),
    #[error("missing \"components:\" line")]
    MissingComponents,
    #[error(transparent)]
    Component(#[from] ComponentParseError),
    #[error("a configuration needs at least one component")]
    Empty,
    #[error("expected {expected} {matrix} rows, found {found}")]
    MissingRows { matrix: &'static str, expected: usize, found: usize },
    #[error("{matrix} row {row} has {found} entries, expected {expected}")]
    RowLength { matrix: &'static str, row: usize, expected: usize, found: usize },
    #[error("{matrix} row {row} has negative entry {value}")]
    NegativeEntry { matrix: &'static str, row: usize, value: f64 },
    #[error("{matrix} row {row} sums to {sum}, expected 1")]
    RowSum { matrix: &'static str, row: usize, sum: f64 },
    #[error("line {line}: expected \"{expected}\" row, found \"{found}\"")]
    BadRowTag { line: usize, expected: &'static str, found: String },
    #[error("line {line}: \"{token}\" is not a probability")]
    BadProbability { line: usize, token: String },
    #[error("unexpected trailing content at line {0}")]
    TrailingContent(usize),
    #[error("unknown preset \"{0}\"")]
    UnknownPreset(String),
}

/// A complete search configuration: the ordered component list (the first
/// entry is where a run starts) and the success/failure transition matrices,
/// both validated row-stochastic. The label is free-form descriptive text
/// and is ignored by equality.
#[derive(Debug, Clone)]
pub struct Configuration {
    components: Vec<ComponentSpec>,
    succ: Vec<Vec<f64>>,
    fail: Vec<Vec<f64>>,
    label: String,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.succ == other.succ && self.fail == other.fail
    }
}

fn validate_matrix(
    matrix: &'static str,
    rows: &[Vec<f64>],
    size: usize,
) -> Result<(), ConfigError> {
    if rows.len() != size {
        return Err(ConfigError::MissingRows { matrix, expected: size, found: rows.len() });
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != size {
            return Err(ConfigError::RowLength {
                matrix,
                row: r + 1,
                expected: size,
                found: row.len(),
            });
        }
        for &p in row {
            if p < 0.0 || !p.is_finite() {
                return Err(ConfigError::NegativeEntry { matrix, row: r + 1, value: p });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ConfigError::RowSum { matrix, row: r + 1, sum });
        }
    }
    Ok(())
}

impl Configuration {
    pub fn new(
        components: Vec<ComponentSpec>,
        succ: Vec<Vec<f64>>,
        fail: Vec<Vec<f64>>,
        label: impl Into<String>,
    ) -> Result<Configuration, ConfigError> {
        if components.is_empty() {
            return Err(ConfigError::Empty);
        }
        validate_matrix("succ", &succ, components.len())?;
        validate_matrix("fail", &fail, components.len())?;
        Ok(Configuration { components, succ, fail, label: label.into() })
    }

    /// Builds a configuration whose matrices have a single 1 per row:
    /// `succ_to[i]` / `fail_to[i]` give the follow-up component index after
    /// component i succeeds / fails.
    pub fn deterministic(
        components: Vec<ComponentSpec>,
        succ_to: &[usize],
        fail_to: &[usize],
        label: impl Into<String>,
    ) -> Result<Configuration, ConfigError> {
        let size = components.len();
        let row = |target: usize| {
            let mut r = vec![0.0; size];
            if target < size {
                r[target] = 1.0;
            }
            r
        };
        Configuration::new(
            components,
            succ_to.iter().map(|&t| row(t)).collect(),
            fail_to.iter().map(|&t| row(t)).collect(),
            label,
        )
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn succ_row(&self, i: usize) -> &[f64] {
        &self.succ[i]
    }

    pub fn fail_row(&self, i: usize) -> &[f64] {
        &self.fail[i]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    /// True iff every row of both matrices is a point distribution (one
    /// entry exactly 1, the rest exactly 0), making the schedule a pure
    /// function of the improved/failed outcome sequence.
    pub fn is_deterministic(&self) -> bool {
        let point = |row: &Vec<f64>| {
            row.iter().filter(|&&p| p == 1.0).count() == 1
                && row.iter().all(|&p| p == 0.0 || p == 1.0)
        };
        self.succ.iter().all(point) && self.fail.iter().all(point)
    }
}

/// Roulette-wheel draw over one matrix row. Entries of zero can never be
/// chosen; accumulated floating-point shortfall falls back to the last
/// positive entry so the draw always lands on the row's support.
fn roulette(row: &[f64], rng: &mut impl Rng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if x < acc {
            return i;
        }
    }
    last_positive
}

/// The Markov walk over component indices, separated from solution state so
/// schedules can be tested against hand-computed traces. Starts at
/// component 0; [`advance`](ComponentChain::advance) consumes one rng draw
/// per transition.
#[derive(Debug, Clone)]
pub struct ComponentChain<'a> {
    config: &'a Configuration,
    current: usize,
}

impl<'a> ComponentChain<'a> {
    pub fn new(config: &'a Configuration) -> ComponentChain<'a> {
        ComponentChain { config, current: 0 }
    }

    /// Index of the component to apply next.
    pub fn current(&self) -> usize {
        self.current
    }

    /// Moves to the next component given whether the last application
    /// strictly improved the objective, and returns the new index.
    pub fn advance(&mut self, improved: bool, rng: &mut impl Rng) -> usize {
        let row = if improved {
            self.config.succ_row(self.current)
        } else {
            self.config.fail_row(self.current)
        };
        self.current = roulette(row, rng);
        self.current
    }
}

/// Knobs for one run. `max_iterations` is a test affordance: production
/// runs leave it `None` and stop on the wall-clock budget alone.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub budget: Duration,
    pub record_trace: bool,
    pub max_iterations: Option<u64>,
}

impl RunParams {
    pub fn with_budget(budget: Duration) -> RunParams {
        RunParams { budget, record_trace: false, max_iterations: None }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Snapshot of the best solution visited.
    pub best: SolutionState,
    /// Objective of `best`.
    pub best_value: Money,
    /// Number of component applications performed.
    pub iterations: u64,
    /// Per-application (component index, improved) pairs when requested.
    pub trace: Option<Vec<(usize, bool)>>,
}

/// Runs the configuration from the opened set `s0` until the budget is
/// exhausted. The deadline is checked before each component application, so
/// overrun is bounded by a single application. The working solution moves
/// wherever the components take it; only strict improvements over the best
/// value seen update the returned incumbent.
pub fn run_cmcs(
    config: &Configuration,
    inst: &Arc<Instance>,
    rank: &RankMatrix,
    s0: &[usize],
    params: &RunParams,
    rng: &mut impl Rng,
) -> Result<RunResult, SolutionError> {
    let mut state = SolutionState::new(Arc::clone(inst), s0)?;
    let mut best = state.clone();
    let mut best_value = state.value();
    let mut chain = ComponentChain::new(config);
    let mut trace = params.record_trace.then(Vec::new);
    let mut iterations: u64 = 0;
    let deadline = Instant::now() + params.budget;
    while Instant::now() < deadline {
        if params.max_iterations.is_some_and(|cap| iterations >= cap) {
            break;
        }
        let index = chain.current();
        let outcome = config.components[index].apply(&mut state, rank, rng);
        iterations += 1;
        if let Some(t) = trace.as_mut() {
            t.push((index, outcome.improved));
        }
        // A non-improving step cannot beat the incumbent: the pre-step value
        // was itself visited, so best_value never exceeds it.
        if outcome.improved && state.value() < best_value {
            best_value = state.value();
            best = state.clone();
        }
        chain.advance(outcome.improved, rng);
    }
    Ok(RunResult { best, best_value, iterations, trace })
}

/// The two published reference configurations.
///
/// `paper-2` pairs `open_best` with `close_random(4)`: the local search
/// retries while it keeps improving and hands over to the mutation when it
/// gets stuck. `paper-3` cycles `close_best`, `exchange_half_fixed`, and
/// `open_random(4)`, always funnelling successes back toward `close_best`.
pub fn preset(name: &str) -> Result<Configuration, ConfigError> {
    match name {
        "paper-2" => Configuration::deterministic(
            vec![ComponentSpec::OpenBest, ComponentSpec::CloseRandom(4)],
            &[0, 0],
            &[1, 0],
            name,
        ),
        "paper-3" => Configuration::deterministic(
            vec![
                ComponentSpec::CloseBest,
                ComponentSpec::ExchangeHalfFixed,
                ComponentSpec::OpenRandom(4),
            ],
            &[0, 0, 1],
            &[1, 2, 1],
            name,
        ),
        _ => Err(ConfigError::UnknownPreset(name.to_string())),
    }
}

fn format_probability(p: f64) -> String {
    if p == p.trunc() && p.abs() < 1e15 {
        format!("{}", p as i64)
    } else {
        format!("{}", p)
    }
}

/// Serializes a configuration to the versioned text format:
///
/// ```text
/// cmcs-config 1
/// components: open_best, close_random(4)
/// succ: 1 0
/// succ: 1 0
/// fail: 0 1
/// fail: 1 0
/// ```
pub fn write_config(config: &Configuration) -> String {
    let mut out = String::from("cmcs-config 1\n");
    let names: Vec<String> = config.components.iter().map(|c| c.name()).collect();
    out.push_str(&format!("components: {}\n", names.join(", ")));
    for (tag, matrix) in [("succ", &config.succ), ("fail", &config.fail)] {
        for row in matrix.iter() {
            let cells: Vec<String> = row.iter().map(|&p| format_probability(p)).collect();
            out.push_str(&format!("{}: {}\n", tag, cells.join(" ")));
        }
    }
    out
}

/// Parses the format written by [`write_config`]. Blank lines and full-line
/// `#` comments are ignored; everything else must match the layout exactly.
/// The label is left empty.
pub fn parse_config(text: &str) -> Result<Configuration, ConfigError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(idx, l)| (idx + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (_, header) = lines.next().ok_or_else(|| ConfigError::BadHeader(String::new()))?;
    if header != "cmcs-config 1" {
        return Err(ConfigError::BadHeader(header.to_string()));
    }

    let (_, comp_line) = lines.next().ok_or(ConfigError::MissingComponents)?;
    let comp_body = comp_line.strip_prefix("components:").ok_or(ConfigError::MissingComponents)?;
    let components = comp_body
        .split(',')
        .map(ComponentSpec::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if components.is_empty() {
        return Err(ConfigError::Empty);
    }
    let size = components.len();

    let mut read_matrix = |tag: &'static str| -> Result<Vec<Vec<f64>>, ConfigError> {
        let mut rows = Vec::with_capacity(size);
        for _ in 0..size {
            let Some((line_no, line)) = lines.next() else {
                return Err(ConfigError::MissingRows { matrix: tag, expected: size, found: rows.len() });
            };
            let body = line.strip_prefix(tag).and_then(|r| r.strip_prefix(':')).ok_or_else(|| {
                ConfigError::BadRowTag { line: line_no, expected: tag, found: line.to_string() }
            })?;
            let row = body
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| ConfigError::BadProbability {
                        line: line_no,
                        token: tok.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Ok(rows)
    };

    let succ = read_matrix("succ")?;
    let fail = read_matrix("fail")?;
    if let Some((line_no, _)) = lines.next() {
        return Err(ConfigError::TrailingContent(line_no));
    }
    Configuration::new(components, succ, fail, "")
}
