//! Problem instances: m candidate sites with fixed opening costs, n clients,
//! and an m x n transportation cost matrix. Includes text parsers/writers and
//! a seeded generator for the classic uniform-cost benchmark families.

use std::fmt;
use std::ops::RangeInclusive;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Money;

/// Transportation costs are always drawn from this range, regardless of class.
pub const TRANSPORT_COST_RANGE: RangeInclusive<Money> = 1000..=2000;

/// Benchmark instance class, which fixes the range fixed costs are drawn from.
/// Transportation costs come from [`TRANSPORT_COST_RANGE`] in every class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KgClass {
    /// Fixed costs in [100, 200]: opening sites is cheap, optima open many.
    A,
    /// Fixed costs in [1000, 2000]: same order of magnitude as transport.
    B,
    /// Fixed costs in [10000, 20000]: opening sites is expensive, optima open few.
    C,
}

impl KgClass {
    pub fn fixed_cost_range(self) -> RangeInclusive<Money> {
        match self {
            KgClass::A => 100..=200,
            KgClass::B => 1000..=2000,
            KgClass::C => 10000..=20000,
        }
    }

    pub fn letter(self) -> char {
        match self {
            KgClass::A => 'a',
            KgClass::B => 'b',
            KgClass::C => 'c',
        }
    }

    pub fn parse(s: &str) -> Option<KgClass> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Some(KgClass::A),
            "b" => Some(KgClass::B),
            "c" => Some(KgClass::C),
            _ => None,
        }
    }
}

impl fmt::Display for KgClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// An immutable SPLP instance. Site and client indices are 0-based in code;
/// file formats use 1-based indices.
///
/// Equality and the text round-trip cover the data fields only: the canonical
/// format carries no name, so `name` is a label (file stem, generator tag)
/// rather than part of the instance's identity.
#[derive(Debug, Clone)]
pub struct Instance {
    name: String,
    m: usize,
    n: usize,
    fixed: Vec<Money>,
    /// Row-major m x n matrix; `cost[i * n + j]` is the cost of serving
    /// client j from site i.
    cost: Vec<Money>,
}

impl Instance {
    /// Builds an instance from per-site cost rows, validating shape and signs.
    pub fn from_rows(
        name: impl Into<String>,
        fixed: Vec<Money>,
        rows: Vec<Vec<Money>>,
    ) -> Result<Instance, InstanceError> {
        let m = fixed.len();
        if m < 2 {
            return Err(InstanceError::TooFewSites { m });
        }
        if rows.len() != m {
            return Err(InstanceError::Shape {
                detail: format!("{} fixed costs but {} cost rows", m, rows.len()),
            });
        }
        let n = rows[0].len();
        if n < 1 {
            return Err(InstanceError::NoClients { n });
        }
        let mut cost = Vec::with_capacity(m * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(InstanceError::Shape {
                    detail: format!("cost row {} has {} entries, expected {}", i + 1, row.len(), n),
                });
            }
            cost.extend_from_slice(row);
        }
        for &f in &fixed {
            if f < 0 {
                return Err(InstanceError::NegativeValue { line: 0, value: f });
            }
        }
        for &c in &cost {
            if c < 0 {
                return Err(InstanceError::NegativeValue { line: 0, value: c });
            }
        }
        Ok(Instance { name: name.into(), m, n, fixed, cost })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Instance {
        self.name = name.into();
        self
    }

    /// Number of candidate sites.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of clients.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fixed_cost(&self, site: usize) -> Money {
        self.fixed[site]
    }

    pub fn fixed_costs(&self) -> &[Money] {
        &self.fixed
    }

    #[inline]
    pub fn cost(&self, site: usize, client: usize) -> Money {
        self.cost[site * self.n + client]
    }

    /// All n transportation costs out of one site.
    pub fn site_costs(&self, site: usize) -> &[Money] {
        &self.cost[site * self.n..(site + 1) * self.n]
    }
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.n == other.n && self.fixed == other.fixed && self.cost == other.cost
    }
}

impl Eq for Instance {}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}: malformed header: {detail}")]
    MalformedHeader { line: usize, detail: String },
    #[error("line {line}: non-integer token \"{token}\"")]
    NonInteger { line: usize, token: String },
    #[error("line {line}: negative cost {value}")]
    NegativeValue { line: usize, value: Money },
    #[error("line {line}: expected {expected} whitespace-separated values, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("line {line}: unexpected trailing content")]
    TrailingContent { line: usize },
    #[error("unexpected end of input: {detail}")]
    UnexpectedEof { detail: String },
    #[error("m must be ≥ 2 (found {m})")]
    TooFewSites { m: usize },
    #[error("n must be ≥ 1 (found {n})")]
    NoClients { n: usize },
    #[error("inconsistent dimensions: {detail}")]
    Shape { detail: String },
    #[error("line {line}: site row {expected} labeled {found}")]
    RowIndexMismatch { line: usize, expected: usize, found: i64 },
    #[error("symmetric generation requires m == n (got {m}x{n})")]
    SymmetricShape { m: usize, n: usize },
    #[error("input matched no known instance format;{0}")]
    Unrecognized(String),
}

/// Non-empty input lines with their 1-based line numbers and tokens.
type Lines<'a> = Vec<(usize, Vec<&'a str>)>;

fn tokenize(text: &str) -> Lines<'_> {
    text.lines()
        .enumerate()
        .filter_map(|(idx, line)| {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                None
            } else {
                Some((idx + 1, tokens))
            }
        })
        .collect()
}

fn parse_count(token: &str, line: usize) -> Result<usize, InstanceError> {
    token
        .parse::<usize>()
        .map_err(|_| InstanceError::NonInteger { line, token: token.to_string() })
}

/// Parses a cost token. The canonical format is strictly integral; the
/// benchmark formats store some integers with a decimal tail ("7500.000"),
/// which is accepted when `allow_integral_decimal` is set.
fn parse_money(token: &str, line: usize, allow_integral_decimal: bool) -> Result<Money, InstanceError> {
    if let Ok(v) = token.parse::<Money>() {
        return Ok(v);
    }
    if allow_integral_decimal {
        if let Some((int_part, frac_part)) = token.split_once('.') {
            if frac_part.chars().all(|c| c == '0') && !int_part.is_empty() {
                if let Ok(v) = int_part.parse::<Money>() {
                    return Ok(v);
                }
            }
        }
    }
    Err(InstanceError::NonInteger { line, token: token.to_string() })
}

fn parse_nonnegative(
    token: &str,
    line: usize,
    allow_integral_decimal: bool,
) -> Result<Money, InstanceError> {
    let v = parse_money(token, line, allow_integral_decimal)?;
    if v < 0 {
        return Err(InstanceError::NegativeValue { line, value: v });
    }
    Ok(v)
}

/// Parses the canonical format: a header line `m n`, then m lines holding a
/// site's fixed cost followed by its n transportation costs.
fn parse_canonical(lines: &Lines<'_>) -> Result<Instance, InstanceError> {
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| InstanceError::UnexpectedEof { detail: "empty input".into() })?;
    if header.len() != 2 {
        return Err(InstanceError::MalformedHeader {
            line: *header_line,
            detail: format!("expected \"m n\", found {} values", header.len()),
        });
    }
    let m = parse_count(header[0], *header_line)?;
    let n = parse_count(header[1], *header_line)?;
    if m < 2 {
        return Err(InstanceError::TooFewSites { m });
    }
    if n < 1 {
        return Err(InstanceError::NoClients { n });
    }
    if lines.len() < 1 + m {
        return Err(InstanceError::UnexpectedEof {
            detail: format!("expected {} site rows, found {}", m, lines.len() - 1),
        });
    }
    if lines.len() > 1 + m {
        return Err(InstanceError::TrailingContent { line: lines[1 + m].0 });
    }
    let mut fixed = Vec::with_capacity(m);
    let mut cost = Vec::with_capacity(m * n);
    for (line_no, tokens) in &lines[1..=m] {
        if tokens.len() != 1 + n {
            return Err(InstanceError::RowLength {
                line: *line_no,
                expected: 1 + n,
                found: tokens.len(),
            });
        }
        fixed.push(parse_nonnegative(tokens[0], *line_no, false)?);
        for token in &tokens[1..] {
            cost.push(parse_nonnegative(token, *line_no, false)?);
        }
    }
    Ok(Instance { name: String::new(), m, n, fixed, cost })
}

/// Parses the one-row-per-site benchmark layout: an optional `FILE:` banner,
/// a header `m n 0`, then m lines of `<1-based site index> <fixed cost>
/// <n transportation costs>`.
fn parse_site_rows(lines: &Lines<'_>) -> Result<Instance, InstanceError> {
    let mut rest = &lines[..];
    let mut name = String::new();
    if let Some((_, tokens)) = rest.first() {
        if tokens[0].eq_ignore_ascii_case("FILE:") || tokens[0].to_ascii_uppercase().starts_with("FILE:") {
            if let Some(banner) = tokens.last() {
                if !banner.eq_ignore_ascii_case("FILE:") {
                    name = banner.trim_end_matches(".txt").to_string();
                }
            }
            rest = &rest[1..];
        }
    }
    let (header_line, header) = rest
        .first()
        .ok_or_else(|| InstanceError::UnexpectedEof { detail: "missing header".into() })?;
    if header.len() != 3 || header[2] != "0" {
        return Err(InstanceError::MalformedHeader {
            line: *header_line,
            detail: "expected \"m n 0\"".into(),
        });
    }
    let m = parse_count(header[0], *header_line)?;
    let n = parse_count(header[1], *header_line)?;
    if m < 2 {
        return Err(InstanceError::TooFewSites { m });
    }
    if n < 1 {
        return Err(InstanceError::NoClients { n });
    }
    let rows = &rest[1..];
    if rows.len() < m {
        return Err(InstanceError::UnexpectedEof {
            detail: format!("expected {} site rows, found {}", m, rows.len()),
        });
    }
    if rows.len() > m {
        return Err(InstanceError::TrailingContent { line: rows[m].0 });
    }
    let mut fixed = Vec::with_capacity(m);
    let mut cost = Vec::with_capacity(m * n);
    for (i, (line_no, tokens)) in rows.iter().enumerate() {
        if tokens.len() != 2 + n {
            return Err(InstanceError::RowLength {
                line: *line_no,
                expected: 2 + n,
                found: tokens.len(),
            });
        }
        let label = parse_money(tokens[0], *line_no, true)?;
        if label != (i + 1) as Money {
            return Err(InstanceError::RowIndexMismatch {
                line: *line_no,
                expected: i + 1,
                found: label,
            });
        }
        fixed.push(parse_nonnegative(tokens[1], *line_no, true)?);
        for token in &tokens[2..] {
            cost.push(parse_nonnegative(token, *line_no, true)?);
        }
    }
    Ok(Instance { name, m, n, fixed, cost })
}

/// Parses the uncapacitated ORLIB layout: a header `m n`, m lines of
/// `<capacity> <fixed cost>`, then for each client its demand followed by the
/// m allocation costs (facility order, possibly wrapped over several lines).
/// Capacities and demands are read and discarded.
fn parse_orlib(lines: &Lines<'_>) -> Result<Instance, InstanceError> {
    let flat: Vec<(usize, &str)> = lines
        .iter()
        .flat_map(|(line_no, tokens)| tokens.iter().map(move |t| (*line_no, *t)))
        .collect();
    let mut pos = 0usize;
    let mut next = |what: &str| -> Result<(usize, &str), InstanceError> {
        let item = flat
            .get(pos)
            .copied()
            .ok_or_else(|| InstanceError::UnexpectedEof { detail: format!("missing {}", what) })?;
        pos += 1;
        Ok(item)
    };
    let (line, tok) = next("site count")?;
    let m = parse_count(tok, line)?;
    let (line, tok) = next("client count")?;
    let n = parse_count(tok, line)?;
    if m < 2 {
        return Err(InstanceError::TooFewSites { m });
    }
    if n < 1 {
        return Err(InstanceError::NoClients { n });
    }
    let mut fixed = Vec::with_capacity(m);
    for _ in 0..m {
        let (line, cap) = next("site capacity")?;
        // Capacities are irrelevant here but must at least look numeric.
        parse_money(cap, line, true)?;
        let (line, tok) = next("fixed cost")?;
        fixed.push(parse_nonnegative(tok, line, true)?);
    }
    let mut cost = vec![0 as Money; m * n];
    for j in 0..n {
        let (line, demand) = next("client demand")?;
        parse_money(demand, line, true)?;
        for i in 0..m {
            let (line, tok) = next("allocation cost")?;
            cost[i * n + j] = parse_nonnegative(tok, line, true)?;
        }
    }
    if pos != flat.len() {
        return Err(InstanceError::TrailingContent { line: flat[pos].0 });
    }
    Ok(Instance { name: String::new(), m, n, fixed, cost })
}

/// Parses instance text, auto-detecting the format from the header shape:
/// a `FILE:` banner or an `m n 0` header selects the one-row-per-site
/// benchmark layout, while an `m n` header is tried as the canonical format
/// first and as the ORLIB uncapacitated layout second. If no parser accepts
/// the input, the error reports every attempt.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let lines = tokenize(text);
    let Some((first_line, first_tokens)) = lines.first() else {
        return Err(InstanceError::UnexpectedEof { detail: "empty input".into() });
    };
    if first_tokens[0].to_ascii_uppercase().starts_with("FILE:") || first_tokens.len() == 3 {
        return parse_site_rows(&lines);
    }
    if first_tokens.len() != 2 {
        return Err(InstanceError::MalformedHeader {
            line: *first_line,
            detail: format!("expected \"m n\", found {} values", first_tokens.len()),
        });
    }
    let canonical_err = match parse_canonical(&lines) {
        Ok(inst) => return Ok(inst),
        Err(e) => e,
    };
    let orlib_err = match parse_orlib(&lines) {
        Ok(inst) => return Ok(inst),
        Err(e) => e,
    };
    Err(InstanceError::Unrecognized(format!(
        "\n  canonical: {}\n  orlib-uncapacitated: {}",
        canonical_err, orlib_err
    )))
}

/// Writes the canonical text form: `m n`, then one line per site with its
/// fixed cost and n transportation costs. `parse_instance` inverts this
/// exactly (up to the name, which the format does not carry).
pub fn write_instance(inst: &Instance) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", inst.m, inst.n));
    for i in 0..inst.m {
        out.push_str(&inst.fixed[i].to_string());
        for &c in inst.site_costs(i) {
            out.push(' ');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    out
}

/// Generates a benchmark-style instance: fixed costs uniform in the class
/// range, transportation costs uniform in [1000, 2000], all drawn from a
/// ChaCha stream seeded with `seed` (fixed costs first, then costs row by
/// row). Symmetric instances require m == n; the upper triangle including
/// the diagonal is drawn and mirrored. The same arguments always produce the
/// identical instance.
pub fn generate_kg_instance(
    class: KgClass,
    m: usize,
    n: usize,
    symmetric: bool,
    seed: u64,
) -> Result<Instance, InstanceError> {
    if m < 2 {
        return Err(InstanceError::TooFewSites { m });
    }
    if n < 1 {
        return Err(InstanceError::NoClients { n });
    }
    if symmetric && m != n {
        return Err(InstanceError::SymmetricShape { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixed_range = class.fixed_cost_range();
    let fixed: Vec<Money> = (0..m).map(|_| rng.random_range(fixed_range.clone())).collect();
    let mut cost = vec![0 as Money; m * n];
    if symmetric {
        for i in 0..m {
            for j in i..n {
                let c = rng.random_range(TRANSPORT_COST_RANGE);
                cost[i * n + j] = c;
                cost[j * n + i] = c;
            }
        }
    } else {
        for c in cost.iter_mut() {
            *c = rng.random_range(TRANSPORT_COST_RANGE);
        }
    }
    let shape = if m == n { format!("{}", m) } else { format!("{}x{}", m, n) };
    let name = format!(
        "g{}{}{}-{}",
        if symmetric { 's' } else { 'a' },
        shape,
        class.letter(),
        seed
    );
    Ok(Instance { name, m, n, fixed, cost })
}
