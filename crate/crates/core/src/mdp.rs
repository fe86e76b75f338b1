//! Centralized scheduling as a finite MDP.
//!
//! Each slot the base station picks one node; that node transmits one packet
//! at its precomputed optimal modulation and then harvests for the rest of
//! the slot. The other nodes only receive arrivals. The cost of a transition
//! is the expected number of packets dropped by full buffers, and value
//! iteration minimizes its discounted sum.
//!
//! Boundary handling follows the per-node kernel in [`Dynamics`]:
//!
//! - A selected node with an empty queue, or whose battery cannot pay for the
//!   transmission, spends the whole slot harvesting (`harvest_only` levels).
//! - Batteries clamp into `0..=K`; overcharge is lost.
//! - An arrival into a full queue is dropped and counted as cost.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::energy::{self, apply_levels, NodeEnergy};
use crate::error::{Error, Result};
use crate::types::{Action, JointState, NetworkParams, NodeState, StateSpace};

/// Default cap on the number of joint states a model may enumerate.
pub const DEFAULT_STATE_BUDGET: usize = 250_000;

/// Default cap on value-iteration sweeps.
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;

/// Action values closer than this are treated as ties (lowest node wins).
pub const TIE_TOL: f64 = 1e-9;

/// One outcome of a node's slot, before merging equal next states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub next: NodeState,
    pub prob: f64,
    /// Packets dropped on this branch.
    pub dropped: u32,
}

/// Per-node slot dynamics of a validated parameter set.
#[derive(Debug, Clone)]
pub struct Dynamics {
    params: NetworkParams,
    energy: Vec<NodeEnergy>,
    success: f64,
    arrival_pmf: Vec<f64>,
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n as usize + 1];
    let mut coeff = 1.0;
    for k in 0..=n {
        if k > 0 {
            coeff = coeff * (n - k + 1) as f64 / k as f64;
        }
        pmf[k as usize] = coeff * libm::pow(p, k as f64) * libm::pow(1.0 - p, (n - k) as f64);
    }
    pmf
}

impl Dynamics {
    pub fn new(params: &NetworkParams) -> Result<Self> {
        params.check()?;
        Ok(Self::with_energy(params, NodeEnergy::for_all(params)?))
    }

    /// Uses caller-supplied per-node energy bookkeeping (e.g. faded gains).
    pub fn with_energy(params: &NetworkParams, energy: Vec<NodeEnergy>) -> Self {
        Self {
            success: energy::packet_success_prob(params),
            arrival_pmf: binomial_pmf(params.arrivals_per_slot(), params.arrival_prob),
            energy,
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn energy(&self) -> &[NodeEnergy] {
        &self.energy
    }

    pub fn success_prob(&self) -> f64 {
        self.success
    }

    /// Probability of `k` packet arrivals at one node during one slot.
    pub fn arrival_pmf(&self) -> &[f64] {
        &self.arrival_pmf
    }

    pub fn n_nodes(&self) -> usize {
        self.params.n_nodes
    }

    /// Whether a selected node in state `s` actually sends a packet.
    pub fn transmits(&self, node: usize, s: NodeState) -> bool {
        s.queue >= 1 && self.energy[node].can_transmit(s.battery)
    }

    fn push_arrivals(&self, out: &mut Vec<Branch>, battery: u32, queue: u32, prob: f64) {
        let cap = self.params.queue_cap;
        for (a, &pa) in self.arrival_pmf.iter().enumerate() {
            let p = prob * pa;
            if p == 0.0 {
                continue;
            }
            let total = queue + a as u32;
            out.push(Branch {
                next: NodeState::new(battery, total.min(cap)),
                prob: p,
                dropped: total.saturating_sub(cap),
            });
        }
    }

    /// Outcomes of the scheduled node: transmission (success w.p. `(1−ε)^L`),
    /// harvest, then arrivals.
    pub fn selected_branches(&self, node: usize, s: NodeState) -> Vec<Branch> {
        let k = self.params.battery_levels;
        let e = &self.energy[node];
        let mut out = Vec::with_capacity(2 * self.arrival_pmf.len());
        if self.transmits(node, s) {
            let battery = apply_levels(s.battery, e.delta, k);
            self.push_arrivals(&mut out, battery, s.queue - 1, self.success);
            self.push_arrivals(&mut out, battery, s.queue, 1.0 - self.success);
        } else {
            let battery = apply_levels(s.battery, e.harvest_only, k);
            self.push_arrivals(&mut out, battery, s.queue, 1.0);
        }
        out
    }

    /// Outcomes of an unscheduled node: arrivals only.
    pub fn unselected_branches(&self, s: NodeState) -> Vec<Branch> {
        let mut out = Vec::with_capacity(self.arrival_pmf.len());
        self.push_arrivals(&mut out, s.battery, s.queue, 1.0);
        out
    }

    pub fn branches(&self, node: usize, s: NodeState, selected: bool) -> Vec<Branch> {
        if selected {
            self.selected_branches(node, s)
        } else {
            self.unselected_branches(s)
        }
    }

    /// Expected packets a node drops this slot.
    pub fn expected_drops(&self, node: usize, s: NodeState, selected: bool) -> f64 {
        self.branches(node, s, selected)
            .iter()
            .map(|b| b.prob * b.dropped as f64)
            .sum()
    }
}

/// Sums probabilities of branches that land in the same state, keeping the
/// order of first appearance.
pub fn merge(branches: &[Branch]) -> Vec<(NodeState, f64)> {
    let mut out: Vec<(NodeState, f64)> = Vec::with_capacity(branches.len());
    for b in branches {
        match out.iter_mut().find(|(s, _)| *s == b.next) {
            Some((_, p)) => *p += b.prob,
            None => out.push((b.next, b.prob)),
        }
    }
    out
}

/// Next-state distribution of the scheduled node.
pub fn selected_transition(
    dynamics: &Dynamics,
    node: usize,
    s: NodeState,
) -> Vec<(NodeState, f64)> {
    merge(&dynamics.selected_branches(node, s))
}

/// Next-state distribution of an unscheduled node.
pub fn unselected_transition(dynamics: &Dynamics, s: NodeState) -> Vec<(NodeState, f64)> {
    merge(&dynamics.unselected_branches(s))
}

/// Joint next-state distribution: the product of the scheduled node's
/// distribution with every other node's.
pub fn joint_transition(
    dynamics: &Dynamics,
    s: &JointState,
    selected: usize,
) -> Result<Vec<(JointState, f64)>> {
    let n = dynamics.n_nodes();
    if s.len() != n {
        return Err(Error::StateOutOfRange(alloc::format!(
            "joint state has {} nodes, expected {n}",
            s.len()
        )));
    }
    if selected >= n {
        return Err(Error::NodeOutOfRange {
            node: selected,
            n_nodes: n,
        });
    }
    let dists: Vec<_> = s
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &ns)| merge(&dynamics.branches(i, ns, i == selected)))
        .collect();
    let mut out = Vec::new();
    let mut pick = vec![0usize; n];
    loop {
        let mut prob = 1.0;
        let mut nodes = Vec::with_capacity(n);
        for (d, &i) in dists.iter().zip(&pick) {
            prob *= d[i].1;
            nodes.push(d[i].0);
        }
        out.push((JointState(nodes), prob));
        if !advance(&mut pick, |i| dists[i].len()) {
            break;
        }
    }
    Ok(out)
}

// Odometer over per-node choices; returns false after the last combination.
fn advance(pick: &mut [usize], len: impl Fn(usize) -> usize) -> bool {
    for i in 0..pick.len() {
        pick[i] += 1;
        if pick[i] < len(i) {
            return true;
        }
        pick[i] = 0;
    }
    false
}

/// Overflow reward of a transition: every node whose queue is pinned at `Q`
/// on both ends contributes its expected drops. With one arrival
/// opportunity per slot that is `(1 − (1−ε)^L)·λ` for a transmitting
/// scheduled node and `λ` for any other node.
pub fn transition_reward(
    dynamics: &Dynamics,
    from: &JointState,
    to: &JointState,
    selected: usize,
) -> f64 {
    let q = dynamics.params().queue_cap;
    from.nodes()
        .iter()
        .zip(to.nodes())
        .enumerate()
        .filter(|(_, (a, b))| a.queue == q && b.queue == q)
        .map(|(i, (a, _))| dynamics.expected_drops(i, *a, i == selected))
        .sum()
}

/// One `(state, action)` row before it is packed into a [`TransitionModel`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowData {
    /// Expected packets dropped during the transition.
    pub cost: f64,
    /// `(next state index, probability, reward)`.
    pub entries: Vec<(u32, f64, f64)>,
}

struct NodeOutcome {
    digit: usize,
    prob: f64,
    pinned: bool,
}

/// Builds the row of `state` under the action that schedules `selected`.
pub fn build_row(
    dynamics: &Dynamics,
    space: &StateSpace,
    state: usize,
    selected: usize,
) -> RowData {
    let n = space.n_nodes;
    let q = space.queue_cap;
    let mut nodes = vec![NodeState::default(); n];
    space.unindex_into(state, &mut nodes);
    let mut cost = 0.0;
    let mut drops = vec![0.0; n];
    let mut per_node: Vec<Vec<NodeOutcome>> = Vec::with_capacity(n);
    for (i, &ns) in nodes.iter().enumerate() {
        let branches = dynamics.branches(i, ns, i == selected);
        drops[i] = branches.iter().map(|b| b.prob * b.dropped as f64).sum();
        cost += drops[i];
        per_node.push(
            merge(&branches)
                .into_iter()
                .map(|(next, prob)| NodeOutcome {
                    digit: space.node_digit(next).expect("kernel stays in range"),
                    prob,
                    pinned: ns.queue == q && next.queue == q,
                })
                .collect(),
        );
    }
    let radix = space.radix();
    let mut entries = Vec::new();
    let mut pick = vec![0usize; n];
    loop {
        let mut idx = 0usize;
        let mut prob = 1.0;
        let mut reward = 0.0;
        for i in (0..n).rev() {
            let o = &per_node[i][pick[i]];
            idx = idx * radix + o.digit;
            prob *= o.prob;
            if o.pinned {
                reward += drops[i];
            }
        }
        if prob > 0.0 {
            entries.push((idx as u32, prob, reward));
        }
        if !advance(&mut pick, |i| per_node[i].len()) {
            break;
        }
    }
    RowData { cost, entries }
}

/// Sparse transition probabilities and rewards over the enumerated joint
/// space, with one action per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    space: StateSpace,
    n_actions: usize,
    row_start: Vec<usize>,
    next: Vec<u32>,
    prob: Vec<f64>,
    reward: Vec<f64>,
    cost: Vec<f64>,
}

/// Borrowed view of one `(state, action)` row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub cost: f64,
    pub next: &'a [u32],
    pub prob: &'a [f64],
    pub reward: &'a [f64],
}

impl Row<'_> {
    pub fn expectation(&self, v: &[f64]) -> f64 {
        self.next
            .iter()
            .zip(self.prob)
            .map(|(&j, &p)| p * v[j as usize])
            .sum()
    }
}

/// Checks the state count of `params` against `budget`.
pub fn checked_state_count(params: &NetworkParams, budget: usize) -> Result<usize> {
    let space = params.state_space();
    match space.size() {
        Some(n) if n <= budget && n <= u32::MAX as usize => Ok(n),
        _ => Err(Error::StateBudgetExceeded {
            states: alloc::format!("{:.4e}", space.size_f64()),
            budget,
        }),
    }
}

impl TransitionModel {
    /// Packs rows ordered by `state * n_actions + action`.
    pub fn from_rows(space: StateSpace, n_actions: usize, rows: Vec<RowData>) -> Self {
        let total: usize = rows.iter().map(|r| r.entries.len()).sum();
        let mut m = Self {
            space,
            n_actions,
            row_start: Vec::with_capacity(rows.len() + 1),
            next: Vec::with_capacity(total),
            prob: Vec::with_capacity(total),
            reward: Vec::with_capacity(total),
            cost: Vec::with_capacity(rows.len()),
        };
        m.row_start.push(0);
        for r in rows {
            m.cost.push(r.cost);
            for (j, p, rw) in r.entries {
                m.next.push(j);
                m.prob.push(p);
                m.reward.push(rw);
            }
            m.row_start.push(m.next.len());
        }
        m
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n_states(&self) -> usize {
        self.cost.len() / self.n_actions.max(1)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_entries(&self) -> usize {
        self.next.len()
    }

    pub fn row(&self, state: usize, action: usize) -> Row<'_> {
        let r = state * self.n_actions + action;
        let (a, b) = (self.row_start[r], self.row_start[r + 1]);
        Row {
            cost: self.cost[r],
            next: &self.next[a..b],
            prob: &self.prob[a..b],
            reward: &self.reward[a..b],
        }
    }
}

/// Enumerates every state and action of `params` into a sparse model.
pub fn build_model(params: &NetworkParams, budget: usize) -> Result<TransitionModel> {
    let dynamics = Dynamics::new(params)?;
    let n_states = checked_state_count(params, budget)?;
    let space = params.state_space();
    let n_actions = params.n_nodes;
    let mut rows = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            rows.push(build_row(&dynamics, &space, s, a));
        }
    }
    Ok(TransitionModel::from_rows(space, n_actions, rows))
}

/// Expected discounted packet loss per joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

/// Scheduled node per joint state, plus each node's modulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub selected: Vec<u32>,
    pub modulation: Vec<u32>,
}

impl Policy {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn action(&self, state: usize) -> Action {
        let selected = self.selected[state] as usize;
        Action {
            selected,
            modulation: self.modulation[selected],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub sweeps: usize,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

/// `ε(1 − ω) / (2ω)`; infinite when ω = 0.
pub fn stopping_threshold(tol: f64, discount: f64) -> f64 {
    if discount == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - discount) / (2.0 * discount)
    }
}

pub fn q_value(
    model: &TransitionModel,
    v: &[f64],
    state: usize,
    action: usize,
    discount: f64,
) -> f64 {
    let row = model.row(state, action);
    row.cost + discount * row.expectation(v)
}

/// Minimizing action and its value; ties within [`TIE_TOL`] go to the
/// lowest node index.
pub fn greedy(model: &TransitionModel, v: &[f64], state: usize, discount: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for a in 0..model.n_actions() {
        let q = q_value(model, v, state, a, discount);
        if q < best.0 - TIE_TOL {
            best = (q, a);
        }
    }
    best
}

/// Value iteration from `v = 0` with the discount and tolerance of `params`.
pub fn value_iteration(model: &TransitionModel, params: &NetworkParams) -> Result<Solution> {
    let modulation = NodeEnergy::for_all(params)?
        .iter()
        .map(|e| e.modulation.order)
        .collect();
    value_iteration_with(
        model,
        params.discount,
        params.vi_tol,
        DEFAULT_MAX_SWEEPS,
        modulation,
    )
}

pub fn value_iteration_with(
    model: &TransitionModel,
    discount: f64,
    tol: f64,
    max_sweeps: usize,
    modulation: Vec<u32>,
) -> Result<Solution> {
    let n = model.n_states();
    let threshold = stopping_threshold(tol, discount);
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        let mut residual: f64 = 0.0;
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = greedy(model, &v, s, discount).0;
            residual = residual.max(libm::fabs(*slot - v[s]));
        }
        core::mem::swap(&mut v, &mut next);
        residuals.push(residual);
        if residual < threshold {
            break;
        }
        if residuals.len() >= max_sweeps {
            return Err(Error::NoConvergence {
                sweeps: residuals.len(),
                residual,
            });
        }
    }
    let selected = (0..n)
        .map(|s| greedy(model, &v, s, discount).1 as u32)
        .collect();
    Ok(Solution {
        values: ValueFunction(v),
        policy: Policy {
            selected,
            modulation,
        },
        sweeps: residuals.len(),
        residuals,
    })
}

/// One-step lookahead over a per-node decomposition of the cost-to-go.
///
/// Each node's cost-to-go `h` comes from a single-node chain in which the node
/// is scheduled with probability `1/N` per slot. The chooser schedules the
/// node whose service lowers `cost + ω·E[h]` the most relative to leaving it
/// alone. Used when the joint space is too large to solve exactly; it is a
/// heuristic, not the optimal policy.
#[derive(Debug, Clone)]
pub struct MyopicEhmdp {
    space: StateSpace,
    /// `[node][digit]`: scheduled minus unscheduled one-step score.
    advantage: Vec<Vec<f64>>,
}

impl MyopicEhmdp {
    pub fn new(dynamics: &Dynamics) -> Self {
        let params = dynamics.params();
        let space = StateSpace::new(1, params.battery_levels, params.queue_cap);
        let n = params.n_nodes;
        let share = 1.0 / n as f64;
        let omega = params.discount;
        let radix = space.radix();
        let advantage = (0..n)
            .map(|node| {
                let kernel = |digit: usize, sel: bool| -> (f64, Vec<(usize, f64)>) {
                    let s = space.node_from_digit(digit);
                    let br = dynamics.branches(node, s, sel);
                    let cost = br.iter().map(|b| b.prob * b.dropped as f64).sum();
                    let next = merge(&br)
                        .into_iter()
                        .map(|(ns, p)| (space.node_digit(ns).expect("in range"), p))
                        .collect();
                    (cost, next)
                };
                let sel: Vec<_> = (0..radix).map(|d| kernel(d, true)).collect();
                let uns: Vec<_> = (0..radix).map(|d| kernel(d, false)).collect();
                let score = |h: &[f64], (c, nx): &(f64, Vec<(usize, f64)>)| -> f64 {
                    c + omega * nx.iter().map(|&(j, p)| p * h[j]).sum::<f64>()
                };
                let mut h = vec![0.0; radix];
                for _ in 0..1_000_000 {
                    let mut diff: f64 = 0.0;
                    let updated: Vec<f64> = (0..radix)
                        .map(|d| share * score(&h, &sel[d]) + (1.0 - share) * score(&h, &uns[d]))
                        .collect();
                    for (a, b) in h.iter().zip(&updated) {
                        diff = diff.max(libm::fabs(a - b));
                    }
                    h = updated;
                    if diff < 1e-11 {
                        break;
                    }
                }
                (0..radix)
                    .map(|d| score(&h, &sel[d]) - score(&h, &uns[d]))
                    .collect()
            })
            .collect();
        Self { space, advantage }
    }

    pub fn choose(&self, nodes: &[NodeState]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &s) in nodes.iter().enumerate() {
            let digit = self.space.node_digit(s).expect("state in range");
            let a = self.advantage[i][digit];
            if a < best.0 - TIE_TOL {
                best = (a, i);
            }
        }
        best.1
    }
}

/// Per-slot EHMDP node chooser.
#[derive(Debug, Clone)]
pub enum EhmdpChooser {
    /// Table lookup into a solved policy.
    Exact {
        policy: Arc<Policy>,
        space: StateSpace,
    },
    Approximate(MyopicEhmdp),
}

impl EhmdpChooser {
    pub fn exact(policy: Arc<Policy>, params: &NetworkParams) -> Result<Self> {
        let space = params.state_space();
        if space.size() != Some(policy.len()) || policy.modulation.len() != params.n_nodes {
            return Err(Error::StrategyMismatch(alloc::format!(
                "policy covers {} states, scenario has {:.4e}",
                policy.len(),
                space.size_f64()
            )));
        }
        Ok(Self::Exact { policy, space })
    }

    pub fn approximate(params: &NetworkParams) -> Result<Self> {
        Ok(Self::Approximate(MyopicEhmdp::new(&Dynamics::new(params)?)))
    }

    pub fn choose(&self, nodes: &[NodeState]) -> usize {
        match self {
            Self::Exact { policy, space } => {
                let mut idx = 0usize;
                for &s in nodes.iter().rev() {
                    idx = idx * space.radix() + space.node_digit(s).expect("state in range");
                }
                policy.selected[idx] as usize
            }
            Self::Approximate(m) => m.choose(nodes),
        }
    }
}
