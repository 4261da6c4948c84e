//! Search components: two randomized mutations (open/close k random sites),
//! three classic best-improvement local searches, and a randomized
//! half-fixed exchange. Local searches apply a move only when it strictly
//! lowers the objective and otherwise leave the state untouched; mutations
//! may worsen it.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::solution::{RankMatrix, SolutionState};
use crate::Money;

/// What a component application did to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    /// True iff the objective strictly decreased.
    pub improved: bool,
    /// Objective change (after minus before); negative means improvement.
    pub delta: Money,
}

impl Outcome {
    fn from_change(before: Money, after: Money) -> Outcome {
        Outcome { improved: after < before, delta: after - before }
    }

    fn unchanged() -> Outcome {
        Outcome { improved: false, delta: 0 }
    }
}

/// Opens up to `k` sites: draws k distinct site indices uniformly from all m
/// sites (all m when k exceeds m) and opens those not already open.
pub fn open_random(state: &mut SolutionState, k: usize, rng: &mut impl Rng) -> Outcome {
    let before = state.value();
    let m = state.instance().m();
    let drawn = rand::seq::index::sample(rng, m, k.min(m));
    for site in drawn {
        if !state.is_open(site) {
            state.open_site(site).expect("site was just checked to be closed");
        }
    }
    Outcome::from_change(before, state.value())
}

/// Closes exactly min(k, |P| - 2) distinct opened sites chosen uniformly,
/// never shrinking the open set below two. With two open sites this is a
/// no-op.
pub fn close_random(state: &mut SolutionState, k: usize, rng: &mut impl Rng) -> Outcome {
    let count = k.min(state.open_count() - 2);
    if count == 0 {
        return Outcome::unchanged();
    }
    let before = state.value();
    let positions = rand::seq::index::sample(rng, state.open_count(), count);
    // Resolve positions to site ids before mutating the open list.
    let sites: Vec<usize> = positions.into_iter().map(|p| state.open_sites()[p]).collect();
    for site in sites {
        state.close_site(site).expect("chosen from the open list, which stays >= 2");
    }
    Outcome::from_change(before, state.value())
}

/// Per-site savings of opening each closed site, ignoring its fixed cost:
/// `gain[i]` sums `c(i, j) - nearest_cost(j)` over the clients that would
/// switch to i. Walks each client's ranking cheapest-first and stops at the
/// current assignment's cost, so the work is proportional to how high the
/// current assignments rank rather than to m * n.
fn opening_gains(state: &SolutionState, rank: &RankMatrix) -> Vec<Money> {
    let mut gain = vec![0 as Money; state.instance().m()];
    let near_cost = state.nearest_costs();
    for (j, &a) in near_cost.iter().enumerate() {
        let (perm, costs) = rank.client_order(j);
        for (&site, &c) in perm.iter().zip(costs) {
            if c >= a {
                break;
            }
            gain[site as usize] += c - a;
        }
    }
    gain
}

/// Opens the closed site with the most negative total objective change
/// (fixed cost plus reassignment savings), if any change is negative.
/// Ties go to the lowest site index.
pub fn open_best(state: &mut SolutionState, rank: &RankMatrix) -> Outcome {
    let inst = Arc::clone(state.instance());
    let m = inst.m();
    if state.open_count() == m {
        return Outcome::unchanged();
    }
    let gain = opening_gains(state, rank);
    let mut best: Option<usize> = None;
    let mut best_delta: Money = 0;
    for (i, &g) in gain.iter().enumerate() {
        if state.is_open(i) {
            continue;
        }
        let delta = inst.fixed_cost(i) + g;
        if delta < best_delta {
            best = Some(i);
            best_delta = delta;
        }
    }
    match best {
        Some(site) => {
            let before = state.value();
            state.open_site(site).expect("candidate is closed");
            debug_assert_eq!(state.value() - before, best_delta);
            Outcome::from_change(before, state.value())
        }
        None => Outcome::unchanged(),
    }
}

/// Closes the open site whose removal lowers the objective the most:
/// closing i saves its fixed cost and charges every client assigned to i
/// the gap to its runner-up. Applies only strict improvements, keeps at
/// least three open sites beforehand (so two remain), and breaks ties
/// toward the lowest site index. Runs in O(m + n).
pub fn close_best(state: &mut SolutionState) -> Outcome {
    if state.open_count() < 3 {
        return Outcome::unchanged();
    }
    let inst = Arc::clone(state.instance());
    let mut delta = vec![0 as Money; inst.m()];
    for &i in state.open_sites() {
        delta[i] = -inst.fixed_cost(i);
    }
    for j in 0..inst.n() {
        delta[state.nearest(j)] += state.second_nearest_cost(j) - state.nearest_cost(j);
    }
    let mut best: Option<usize> = None;
    let mut best_delta: Money = 0;
    for &i in state.open_sites() {
        if delta[i] < best_delta {
            best = Some(i);
            best_delta = delta[i];
        }
    }
    match best {
        Some(site) => {
            let before = state.value();
            state.close_site(site).expect("open and |P| >= 3");
            debug_assert_eq!(state.value() - before, best_delta);
            Outcome::from_change(before, state.value())
        }
        None => Outcome::unchanged(),
    }
}

/// Objective change of swapping `closing` (open) for each closed candidate,
/// folded into `scratch` (indexed by site, valid at closed indices only):
/// clients assigned to `closing` pay `clamp(c(i, j), a_j, b_j) - a_j`, the
/// loss of falling back to the cheaper of candidate i and the runner-up.
fn fill_swap_losses(state: &SolutionState, closing: usize, closed: &[usize], scratch: &mut [Money]) {
    let inst = state.instance();
    for &i in closed {
        scratch[i] = 0;
    }
    let near = state.nearest_sites();
    for (j, &site) in near.iter().enumerate() {
        if site != closing {
            continue;
        }
        let a = state.nearest_cost(j);
        let b = state.second_nearest_cost(j);
        for &i in closed {
            scratch[i] += inst.cost(i, j).clamp(a, b) - a;
        }
    }
}

/// Swaps one open site for one closed site, taking the pair with the most
/// negative exact objective change if one is negative. Ties go to the
/// lowest (closing, opening) pair. O(m * n) over all m * |P| candidate
/// pairs, matching a naive per-pair evaluation move for move.
pub fn exchange_best(state: &mut SolutionState, rank: &RankMatrix) -> Outcome {
    let inst = Arc::clone(state.instance());
    let m = inst.m();
    let closed: Vec<usize> = (0..m).filter(|&i| !state.is_open(i)).collect();
    if closed.is_empty() {
        return Outcome::unchanged();
    }
    let gain = opening_gains(state, rank);
    let mut loss = vec![0 as Money; m];
    let mut best: Option<(usize, usize)> = None;
    let mut best_delta: Money = 0;
    for r_pos in 0..state.open_count() {
        let r = state.open_sites()[r_pos];
        fill_swap_losses(state, r, &closed, &mut loss);
        for &i in &closed {
            let delta = inst.fixed_cost(i) - inst.fixed_cost(r) + gain[i] + loss[i];
            if delta < best_delta {
                best = Some((r, i));
                best_delta = delta;
            }
        }
    }
    match best {
        Some((closing, opening)) => {
            let before = state.value();
            // Open first so the open set never dips below two sites.
            state.open_site(opening).expect("candidate is closed");
            state.close_site(closing).expect("still open, |P| >= 3 after opening");
            debug_assert_eq!(state.value() - before, best_delta);
            Outcome::from_change(before, state.value())
        }
        None => Outcome::unchanged(),
    }
}

/// The best strict-improvement swap when the closing site is pinned.
/// `closing` must be open. Exposed separately so tests can force the
/// otherwise random half of [`exchange_half_fixed`].
pub fn exchange_with_fixed_close(
    state: &mut SolutionState,
    rank: &RankMatrix,
    closing: usize,
) -> Outcome {
    assert!(state.is_open(closing), "closing site must be open");
    let inst = Arc::clone(state.instance());
    let m = inst.m();
    let closed: Vec<usize> = (0..m).filter(|&i| !state.is_open(i)).collect();
    if closed.is_empty() {
        return Outcome::unchanged();
    }
    let gain = opening_gains(state, rank);
    let mut loss = vec![0 as Money; m];
    fill_swap_losses(state, closing, &closed, &mut loss);
    let mut best: Option<usize> = None;
    let mut best_delta: Money = 0;
    for &i in &closed {
        let delta = inst.fixed_cost(i) - inst.fixed_cost(closing) + gain[i] + loss[i];
        if delta < best_delta {
            best = Some(i);
            best_delta = delta;
        }
    }
    match best {
        Some(opening) => {
            let before = state.value();
            state.open_site(opening).expect("candidate is closed");
            state.close_site(closing).expect("still open, |P| >= 3 after opening");
            debug_assert_eq!(state.value() - before, best_delta);
            Outcome::from_change(before, state.value())
        }
        None => Outcome::unchanged(),
    }
}

/// Draws the closing site uniformly from the open set, then applies the best
/// strict-improvement swap for that site (if any). Randomized, but never
/// worsens the objective.
pub fn exchange_half_fixed(
    state: &mut SolutionState,
    rank: &RankMatrix,
    rng: &mut impl Rng,
) -> Outcome {
    let closing = state.open_sites()[rng.random_range(0..state.open_count())];
    exchange_with_fixed_close(state, rank, closing)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComponentParseError {
    #[error("unknown component \"{0}\"")]
    Unknown(String),
    #[error("component parameter k must be in 1..=4 (got {0})")]
    BadParameter(i64),
}

/// A component identity: which operation to run and, for the mutations, how
/// many sites to touch. The scheduling-relevant properties (improvement
/// pressure, ability to worsen, classic deterministic local search) are pure
/// functions of the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentSpec {
    OpenRandom(u8),
    CloseRandom(u8),
    OpenBest,
    CloseBest,
    ExchangeBest,
    ExchangeHalfFixed,
}

impl ComponentSpec {
    /// True for components that only ever apply strict improvements.
    pub fn improvement_pressure(self) -> bool {
        !matches!(self, ComponentSpec::OpenRandom(_) | ComponentSpec::CloseRandom(_))
    }

    /// True for components that can increase the objective.
    pub fn can_worsen(self) -> bool {
        matches!(self, ComponentSpec::OpenRandom(_) | ComponentSpec::CloseRandom(_))
    }

    /// True for the deterministic best-improvement local searches. Running
    /// one of these twice in a row after a failure is pointless: it would
    /// re-evaluate the identical neighborhood.
    pub fn classic_deterministic_ls(self) -> bool {
        matches!(
            self,
            ComponentSpec::OpenBest | ComponentSpec::CloseBest | ComponentSpec::ExchangeBest
        )
    }

    /// The display/file name, e.g. `open_random(2)` or `exchange_best`.
    pub fn name(self) -> String {
        match self {
            ComponentSpec::OpenRandom(k) => format!("open_random({})", k),
            ComponentSpec::CloseRandom(k) => format!("close_random({})", k),
            ComponentSpec::OpenBest => "open_best".into(),
            ComponentSpec::CloseBest => "close_best".into(),
            ComponentSpec::ExchangeBest => "exchange_best".into(),
            ComponentSpec::ExchangeHalfFixed => "exchange_half_fixed".into(),
        }
    }

    /// Inverse of [`ComponentSpec::name`]. Mutation parameters are limited
    /// to k in 1..=4.
    pub fn parse(s: &str) -> Result<ComponentSpec, ComponentParseError> {
        let s = s.trim();
        match s {
            "open_best" => return Ok(ComponentSpec::OpenBest),
            "close_best" => return Ok(ComponentSpec::CloseBest),
            "exchange_best" => return Ok(ComponentSpec::ExchangeBest),
            "exchange_half_fixed" => return Ok(ComponentSpec::ExchangeHalfFixed),
            _ => {}
        }
        for (prefix, make) in [
            ("open_random(", ComponentSpec::OpenRandom as fn(u8) -> ComponentSpec),
            ("close_random(", ComponentSpec::CloseRandom as fn(u8) -> ComponentSpec),
        ] {
            if let Some(arg) = s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) {
                let k: i64 = arg
                    .trim()
                    .parse()
                    .map_err(|_| ComponentParseError::Unknown(s.to_string()))?;
                if !(1..=4).contains(&k) {
                    return Err(ComponentParseError::BadParameter(k));
                }
                return Ok(make(k as u8));
            }
        }
        Err(ComponentParseError::Unknown(s.to_string()))
    }

    /// Runs the component against the state.
    pub fn apply(
        self,
        state: &mut SolutionState,
        rank: &RankMatrix,
        rng: &mut impl Rng,
    ) -> Outcome {
        match self {
            ComponentSpec::OpenRandom(k) => open_random(state, k as usize, rng),
            ComponentSpec::CloseRandom(k) => close_random(state, k as usize, rng),
            ComponentSpec::OpenBest => open_best(state, rank),
            ComponentSpec::CloseBest => close_best(state),
            ComponentSpec::ExchangeBest => exchange_best(state, rank),
            ComponentSpec::ExchangeHalfFixed => exchange_half_fixed(state, rank, rng),
        }
    }
}

impl std::fmt::Display for ComponentSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}
