//! Incremental solution state: which sites are open, each client's closest
//! and second-closest opened site, and the exactly maintained objective
//! value. Opening a site costs O(n); closing one costs O(n * |P|) in the
//! worst case because affected clients rescan the open set for a new
//! runner-up.
//!
//! All argmins over sites use a total order on (cost, site index) so that
//! ties resolve to the lower index. That keeps the cached closest/runner-up
//! assignments equal to a from-scratch recomputation after any sequence of
//! operations, even on instances with duplicate costs.

use std::sync::Arc;

use thiserror::Error;

use crate::instance::Instance;
use crate::Money;

/// True when site `a` at cost `ca` is strictly closer than site `b` at cost
/// `cb` under the tie-breaking order: cheaper wins, equal costs go to the
/// lower site index.
#[inline]
pub(crate) fn beats(ca: Money, a: usize, cb: Money, b: usize) -> bool {
    ca < cb || (ca == cb && a < b)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolutionError {
    #[error("site index {site} out of range (m = {m})")]
    IndexOutOfRange { site: usize, m: usize },
    #[error("site {site} is already open")]
    AlreadyOpen { site: usize },
    #[error("site {site} is not open")]
    NotOpen { site: usize },
    #[error("at least two distinct sites must be open (got {open})")]
    TooFewOpen { open: usize },
    #[error("the opened set is empty")]
    EmptyOpenSet,
}

/// Per-client orderings of all sites by (cost, index). `site_at(j, 0)` is
/// client j's cheapest site overall; `rank_of(j, i)` inverts that
/// permutation. Sorted costs are cached so scans that walk a client's
/// ranking cheapest-first read memory sequentially.
#[derive(Debug)]
pub struct RankMatrix {
    m: usize,
    perm: Vec<u32>,
    rank: Vec<u32>,
    sorted_cost: Vec<Money>,
}

impl RankMatrix {
    /// O(n * m log m) construction; instances are immutable so this is done
    /// once and shared.
    pub fn build(inst: &Instance) -> RankMatrix {
        let (m, n) = (inst.m(), inst.n());
        let mut perm = vec![0u32; n * m];
        let mut rank = vec![0u32; n * m];
        let mut sorted_cost = vec![0 as Money; n * m];
        let mut order: Vec<u32> = (0..m as u32).collect();
        for j in 0..n {
            order.sort_unstable_by_key(|&i| (inst.cost(i as usize, j), i));
            let row = &mut perm[j * m..(j + 1) * m];
            row.copy_from_slice(&order);
            for (r, &i) in order.iter().enumerate() {
                rank[j * m + i as usize] = r as u32;
                sorted_cost[j * m + r] = inst.cost(i as usize, j);
            }
            // Reset to the identity so every client sorts from the same
            // starting permutation (keeps the sort fully deterministic).
            for (slot, i) in order.iter_mut().zip(0..m as u32) {
                *slot = i;
            }
        }
        RankMatrix { m, perm, rank, sorted_cost }
    }

    /// The site at position `rank` in client `client`'s cheapest-first order.
    pub fn site_at(&self, client: usize, rank: usize) -> usize {
        self.perm[client * self.m + rank] as usize
    }

    /// The position of `site` in client `client`'s cheapest-first order.
    pub fn rank_of(&self, client: usize, site: usize) -> usize {
        self.rank[client * self.m + site] as usize
    }

    /// A client's full ranking and the matching sorted costs.
    pub fn client_order(&self, client: usize) -> (&[u32], &[Money]) {
        let row = client * self.m..(client + 1) * self.m;
        (&self.perm[row.clone()], &self.sorted_cost[row])
    }
}

/// A feasible solution with incrementally maintained caches: the opened set
/// (always at least two sites), each client's closest and second-closest
/// opened site with their costs, and the objective value.
#[derive(Debug, Clone)]
pub struct SolutionState {
    inst: Arc<Instance>,
    is_open: Vec<bool>,
    /// Opened sites in ascending order.
    open_list: Vec<usize>,
    near: Vec<usize>,
    second: Vec<usize>,
    near_cost: Vec<Money>,
    second_cost: Vec<Money>,
    value: Money,
}

impl SolutionState {
    /// Builds the state for an opened set, deduplicating the input. Costs
    /// O(n * |P|). At least two distinct sites must be given.
    pub fn new(inst: Arc<Instance>, opened: &[usize]) -> Result<SolutionState, SolutionError> {
        let (m, n) = (inst.m(), inst.n());
        let mut open_list: Vec<usize> = opened.to_vec();
        open_list.sort_unstable();
        open_list.dedup();
        if let Some(&site) = open_list.iter().find(|&&s| s >= m) {
            return Err(SolutionError::IndexOutOfRange { site, m });
        }
        if open_list.len() < 2 {
            return Err(SolutionError::TooFewOpen { open: open_list.len() });
        }
        let mut is_open = vec![false; m];
        let mut value: Money = 0;
        for &i in &open_list {
            is_open[i] = true;
            value += inst.fixed_cost(i);
        }
        let mut near = vec![0usize; n];
        let mut second = vec![0usize; n];
        let mut near_cost = vec![0 as Money; n];
        let mut second_cost = vec![0 as Money; n];
        for j in 0..n {
            let (mut p, mut pc) = (usize::MAX, Money::MAX);
            let (mut q, mut qc) = (usize::MAX, Money::MAX);
            for &i in &open_list {
                let c = inst.cost(i, j);
                if beats(c, i, pc, p) {
                    (q, qc) = (p, pc);
                    (p, pc) = (i, c);
                } else if beats(c, i, qc, q) {
                    (q, qc) = (i, c);
                }
            }
            near[j] = p;
            second[j] = q;
            near_cost[j] = pc;
            second_cost[j] = qc;
            value += pc;
        }
        Ok(SolutionState { inst, is_open, open_list, near, second, near_cost, second_cost, value })
    }

    /// Opens a closed site in O(n): each client checks whether the new site
    /// displaces its closest or second-closest assignment.
    pub fn open_site(&mut self, site: usize) -> Result<(), SolutionError> {
        let m = self.inst.m();
        if site >= m {
            return Err(SolutionError::IndexOutOfRange { site, m });
        }
        if self.is_open[site] {
            return Err(SolutionError::AlreadyOpen { site });
        }
        let costs = self.inst.site_costs(site);
        for (j, &c) in costs.iter().enumerate() {
            if beats(c, site, self.near_cost[j], self.near[j]) {
                self.value += c - self.near_cost[j];
                self.second[j] = self.near[j];
                self.second_cost[j] = self.near_cost[j];
                self.near[j] = site;
                self.near_cost[j] = c;
            } else if beats(c, site, self.second_cost[j], self.second[j]) {
                // Not closer than the closest, but it displaces the
                // runner-up; the objective is unchanged.
                self.second[j] = site;
                self.second_cost[j] = c;
            }
        }
        self.value += self.inst.fixed_cost(site);
        self.is_open[site] = true;
        let pos = self.open_list.binary_search(&site).unwrap_err();
        self.open_list.insert(pos, site);
        Ok(())
    }

    /// Closes an open site, keeping at least two open. Clients that lost
    /// their closest site fall back to the runner-up and rescan the open
    /// set for a new one; clients that lost only the runner-up rescan too.
    pub fn close_site(&mut self, site: usize) -> Result<(), SolutionError> {
        let m = self.inst.m();
        if site >= m {
            return Err(SolutionError::IndexOutOfRange { site, m });
        }
        if !self.is_open[site] {
            return Err(SolutionError::NotOpen { site });
        }
        if self.open_list.len() == 2 {
            return Err(SolutionError::TooFewOpen { open: 1 });
        }
        let pos = self.open_list.binary_search(&site).unwrap();
        self.open_list.remove(pos);
        self.is_open[site] = false;
        for j in 0..self.inst.n() {
            if self.near[j] == site {
                self.value += self.second_cost[j] - self.near_cost[j];
                self.near[j] = self.second[j];
                self.near_cost[j] = self.second_cost[j];
                let (q, qc) = self.runner_up(j);
                self.second[j] = q;
                self.second_cost[j] = qc;
            } else if self.second[j] == site {
                let (q, qc) = self.runner_up(j);
                self.second[j] = q;
                self.second_cost[j] = qc;
            }
        }
        self.value -= self.inst.fixed_cost(site);
        Ok(())
    }

    /// Best open site for `client` other than its current closest.
    fn runner_up(&self, client: usize) -> (usize, Money) {
        let skip = self.near[client];
        let (mut q, mut qc) = (usize::MAX, Money::MAX);
        for &i in &self.open_list {
            if i == skip {
                continue;
            }
            let c = self.inst.cost(i, client);
            if beats(c, i, qc, q) {
                (q, qc) = (i, c);
            }
        }
        (q, qc)
    }

    /// Cached objective value: opened fixed costs plus each client's cost to
    /// its closest opened site.
    pub fn value(&self) -> Money {
        self.value
    }

    /// Full recomputation from the instance and opened set, ignoring every
    /// cache. This is the oracle the incremental bookkeeping is tested
    /// against; it is also what solution verification uses.
    pub fn recompute_objective(&self) -> Money {
        set_objective(&self.inst, &self.open_list).expect("open set is valid by construction")
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.inst
    }

    /// Opened sites in ascending order.
    pub fn open_sites(&self) -> &[usize] {
        &self.open_list
    }

    pub fn open_count(&self) -> usize {
        self.open_list.len()
    }

    pub fn is_open(&self, site: usize) -> bool {
        self.is_open[site]
    }

    /// Client's closest opened site.
    pub fn nearest(&self, client: usize) -> usize {
        self.near[client]
    }

    /// Client's second-closest opened site.
    pub fn second_nearest(&self, client: usize) -> usize {
        self.second[client]
    }

    pub fn nearest_cost(&self, client: usize) -> Money {
        self.near_cost[client]
    }

    pub fn second_nearest_cost(&self, client: usize) -> Money {
        self.second_cost[client]
    }

    pub(crate) fn nearest_costs(&self) -> &[Money] {
        &self.near_cost
    }

    pub(crate) fn nearest_sites(&self) -> &[usize] {
        &self.near
    }
}

/// Objective of an arbitrary opened set computed from scratch. Unlike
/// [`SolutionState`], a single opened site is acceptable here; this is the
/// recomputation path used to verify externally produced solutions.
pub fn set_objective(inst: &Instance, opened: &[usize]) -> Result<Money, SolutionError> {
    let mut sites: Vec<usize> = opened.to_vec();
    sites.sort_unstable();
    sites.dedup();
    if sites.is_empty() {
        return Err(SolutionError::EmptyOpenSet);
    }
    if let Some(&site) = sites.iter().find(|&&s| s >= inst.m()) {
        return Err(SolutionError::IndexOutOfRange { site, m: inst.m() });
    }
    let mut total: Money = sites.iter().map(|&i| inst.fixed_cost(i)).sum();
    for j in 0..inst.n() {
        total += sites.iter().map(|&i| inst.cost(i, j)).min().unwrap();
    }
    Ok(total)
}
