//! Semi-decentralized energy-queue aware transmission (E-QAT).
//!
//! Every node self-nominates with a probability `f(e, q)` that grows with
//! its queue and shrinks with its battery. The base station's beacon carries
//! everyone's probability, from which a node computes its collision
//! probability and the transition law of its own state. A node whose intended
//! move (deliver one packet and harvest) is less likely than a threshold
//! holds; collisions trigger a random backoff; both escalate the node's
//! probability as `min{1, (1 + α)^f · p}`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::energy::apply_levels;
use crate::error::{Error, Result};
use crate::mdp::Dynamics;
use crate::special::gamma_p;
use crate::types::{NetworkParams, NodeState};

/// Shape of `p = f(e, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum TxProbDesign {
    /// `(1 − e^{−κ_q q}) e^{−κ_e e}`.
    Exponential { kappa_q: f64, kappa_e: f64 },
    /// `sin(π/2 · q/Q) cos(π/2 · e/K)`.
    Sigmoid,
    /// `γ(ϱ, q/(θ e)) / Γ(ϱ)`.
    Gamma { shape: f64, scale: f64 },
}

impl TxProbDesign {
    /// Exponential design with one rate for queue and battery.
    pub fn exponential(rate: f64) -> Self {
        Self::Exponential {
            kappa_q: rate,
            kappa_e: rate,
        }
    }

    pub fn gamma_default() -> Self {
        Self::Gamma {
            shape: 2.0,
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            Self::Exponential { kappa_q, kappa_e } if !(ok(kappa_q) && ok(kappa_e)) => {
                Err(Error::InvalidDesign(format!(
                    "exponential rates {kappa_q}, {kappa_e} must be positive"
                )))
            }
            Self::Gamma { shape, scale } if !(ok(shape) && ok(scale)) => Err(Error::InvalidDesign(
                format!("gamma shape {shape} and scale {scale} must be positive"),
            )),
            _ => Ok(()),
        }
    }

    /// Short label used in tables and file names.
    pub fn label(&self) -> alloc::string::String {
        match self {
            Self::Exponential { kappa_q, kappa_e } if kappa_q == kappa_e => {
                format!("exp({kappa_q})")
            }
            Self::Exponential { kappa_q, kappa_e } => format!("exp({kappa_q},{kappa_e})"),
            Self::Sigmoid => "sigmoid".into(),
            Self::Gamma { shape, scale } => format!("gamma({shape},{scale})"),
        }
    }
}

/// Transmission probability of a node at battery level `e` and queue `q`.
///
/// For the gamma design `e = 0` sends the argument to infinity, so the
/// probability is 1 for any non-empty queue.
pub fn tx_prob(design: &TxProbDesign, e: u32, q: u32, params: &NetworkParams) -> Result<f64> {
    design.validate()?;
    if e > params.battery_levels || q > params.queue_cap {
        return Err(Error::StateOutOfRange(format!("battery {e}, queue {q}")));
    }
    Ok(tx_prob_unchecked(design, e, q, params))
}

pub(crate) fn tx_prob_unchecked(
    design: &TxProbDesign,
    e: u32,
    q: u32,
    params: &NetworkParams,
) -> f64 {
    let (e, q) = (e as f64, q as f64);
    let p = match *design {
        TxProbDesign::Exponential { kappa_q, kappa_e } => {
            -libm::expm1(-kappa_q * q) * libm::exp(-kappa_e * e)
        }
        TxProbDesign::Sigmoid => {
            libm::sin(FRAC_PI_2 * q / params.queue_cap as f64)
                * libm::cos(FRAC_PI_2 * e / params.battery_levels as f64)
        }
        TxProbDesign::Gamma { shape, scale } => {
            if q == 0.0 {
                0.0
            } else if e == 0.0 {
                1.0
            } else {
                gamma_p(shape, q / (scale * e))
            }
        }
    };
    p.clamp(0.0, 1.0)
}

/// Probability that at least one node other than `k` transmits,
/// `1 − Π_{n≠k}(1 − p_n)`.
pub fn collision_prob(k: usize, p: &[f64]) -> f64 {
    1.0 - no_collision_prob(k, p)
}

fn no_collision_prob(k: usize, p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .filter(|&(n, _)| n != k)
        .map(|(_, &pn)| 1.0 - pn)
        .product()
}

/// The cases of the collided transition law of a transmitting node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollidedCase {
    /// No collision, packet corrupted, new arrival: battery +Δ𝓔, queue +1.
    FailedWithArrival,
    /// No collision, delivered, no arrival: battery +Δ𝓔, queue −1.
    Delivered,
    /// No collision, queue unchanged: battery +Δ𝓔.
    Steady,
    /// Collision, queue unchanged: battery −Δν.
    CollidedSteady,
    /// Collision, queue −1: battery −Δν.
    CollidedDequeue,
    /// Collision with a new arrival: battery −Δν, queue +1. Completes the
    /// other cases so the row sums to 1.
    CollidedArrival,
    /// The node has nothing to send or too little energy to send it, and is
    /// alone on the channel: the whole slot charges it.
    Charged,
    /// As `Charged`, but others transmitted: battery −Δν, no charging.
    CollidedUncharged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollidedBranch {
    pub case: CollidedCase,
    pub next: NodeState,
    pub prob: f64,
}

/// Probability of at least one arrival during a slot.
pub fn slot_arrival_prob(params: &NetworkParams) -> f64 {
    1.0 - libm::pow(1.0 - params.arrival_prob, params.arrivals_per_slot() as f64)
}

/// Branches of node `k`'s collided transition law given the beacon `p`.
///
/// Queue and battery clamp into range; `Δν` is the node's transmit energy in
/// whole levels, rounded up.
pub fn collided_branches(
    dynamics: &Dynamics,
    k: usize,
    s: NodeState,
    p: &[f64],
) -> Vec<CollidedBranch> {
    let params = dynamics.params();
    let lambda = slot_arrival_prob(params);
    let qcap = params.queue_cap;
    let kmax = params.battery_levels;
    let at = |battery: u32, queue: i64| NodeState::new(battery, queue.clamp(0, qcap as i64) as u32);
    let q = s.queue as i64;
    let e = dynamics.energy()[k];
    let clear = no_collision_prob(k, p);
    let coll = 1.0 - clear;
    let down = apply_levels(s.battery, -(e.tx_levels as i64), kmax);
    use CollidedCase::*;
    if !dynamics.transmits(k, s) {
        let charged = apply_levels(s.battery, e.harvest_only, kmax);
        return [
            (Charged, charged, q + 1, lambda * clear),
            (Charged, charged, q, (1.0 - lambda) * clear),
            (CollidedUncharged, down, q + 1, lambda * coll),
            (CollidedUncharged, down, q, (1.0 - lambda) * coll),
        ]
        .into_iter()
        .map(|(case, b, nq, prob)| CollidedBranch {
            case,
            next: at(b, nq),
            prob,
        })
        .collect();
    }
    let succ = dynamics.success_prob();
    let up = apply_levels(s.battery, e.delta, kmax);
    let steady = (1.0 - succ) * (1.0 - lambda) + succ * lambda;
    [
        (FailedWithArrival, up, q + 1, (1.0 - succ) * lambda * clear),
        (Delivered, up, q - 1, succ * (1.0 - lambda) * clear),
        (Steady, up, q, steady * clear),
        (CollidedSteady, down, q, steady * coll),
        (CollidedDequeue, down, q - 1, succ * (1.0 - lambda) * coll),
        (CollidedArrival, down, q + 1, (1.0 - succ) * lambda * coll),
    ]
    .into_iter()
    .map(|(case, b, nq, prob)| CollidedBranch {
        case,
        next: at(b, nq),
        prob,
    })
    .collect()
}

/// Merged next-state distribution of the collided transition law.
pub fn collided_transition(
    dynamics: &Dynamics,
    k: usize,
    s: NodeState,
    p: &[f64],
) -> Vec<(NodeState, f64)> {
    let mut out: Vec<(NodeState, f64)> = Vec::new();
    for b in collided_branches(dynamics, k, s, p) {
        if b.prob == 0.0 {
            continue;
        }
        match out.iter_mut().find(|(x, _)| *x == b.next) {
            Some((_, m)) => *m += b.prob,
            None => out.push((b.next, b.prob)),
        }
    }
    out
}

/// The state a nominating node aims for: one packet delivered and Δ𝓔
/// harvested, or a full slot of charging when it cannot transmit.
pub fn intended_state(dynamics: &Dynamics, k: usize, s: NodeState) -> NodeState {
    let e = dynamics.energy()[k];
    let kmax = dynamics.params().battery_levels;
    if dynamics.transmits(k, s) {
        NodeState::new(apply_levels(s.battery, e.delta, kmax), s.queue - 1)
    } else {
        NodeState::new(apply_levels(s.battery, e.harvest_only, kmax), s.queue)
    }
}

/// Collided-transition mass of the intended state.
pub fn intended_mass(dynamics: &Dynamics, k: usize, s: NodeState, p: &[f64]) -> f64 {
    let target = intended_state(dynamics, k, s);
    collided_transition(dynamics, k, s, p)
        .into_iter()
        .filter(|(x, _)| *x == target)
        .map(|(_, m)| m)
        .sum()
}

/// E-QAT protocol constants.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EqatConfig {
    pub design: TxProbDesign,
    /// Escalation rate α.
    pub alpha: f64,
    /// Minimum intended-move mass required to transmit.
    pub threshold: f64,
    /// Backoff after a collision is uniform over `1..=backoff_window` slots.
    pub backoff_window: u32,
    pub beacon: BeaconSource,
}

/// What the per-slot beacon tells each node about the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BeaconSource {
    /// `f(e, q)` of every node's current state.
    Design,
    /// The probability each node contended with in the previous slot.
    #[default]
    Reported,
}

impl Default for EqatConfig {
    fn default() -> Self {
        Self {
            design: TxProbDesign::exponential(0.5),
            alpha: 0.5,
            threshold: 0.05,
            backoff_window: 8,
            beacon: BeaconSource::default(),
        }
    }
}

impl EqatConfig {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidDesign(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidDesign(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        if self.backoff_window == 0 {
            return Err(Error::InvalidDesign(
                "backoff window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// What a node does in the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Contends for the slot. A node short of transmit energy contends too
    /// and is charged if it ends up alone.
    Transmit { modulation: u32 },
    /// The gate blocked it; escalated.
    Hold,
    /// Waiting out a collision backoff.
    Backoff,
    /// Nothing to send, or the self-nomination draw came up empty.
    Silent,
}

/// Outcome reported back to a node that transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Delivered,
    Corrupted,
    Collided,
}

/// Per-node E-QAT state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqatNodeCtl {
    /// Design probability `f(e, q)` of the current state.
    pub base_p: f64,
    /// Failed frames since the last success.
    pub fail_count: u32,
    pub alpha: f64,
    pub threshold: f64,
    /// Slots of backoff left.
    pub backoff: u32,
    /// Probability the node contended with in its last slot; 0 when it
    /// held, backed off or had nothing to send.
    pub reported_p: f64,
}

const MAX_FAILS: u32 = 1 << 16;

impl EqatNodeCtl {
    pub fn new(cfg: &EqatConfig) -> Self {
        Self {
            base_p: 0.0,
            fail_count: 0,
            alpha: cfg.alpha,
            threshold: cfg.threshold,
            backoff: 0,
            reported_p: 0.0,
        }
    }

    /// `min{1, (1 + α)^f · p}`.
    pub fn effective_p(&self) -> f64 {
        if self.base_p <= 0.0 {
            return 0.0;
        }
        let boost = libm::pow(1.0 + self.alpha, self.fail_count as f64);
        (boost * self.base_p).min(1.0)
    }

    pub fn escalate(&mut self) {
        self.fail_count = (self.fail_count + 1).min(MAX_FAILS);
    }

    /// Recomputes `base_p` from the node's state.
    pub fn refresh(&mut self, design: &TxProbDesign, s: NodeState, params: &NetworkParams) {
        self.base_p = tx_prob_unchecked(design, s.battery, s.queue, params);
    }

    /// One slot of the E-QAT decision for node `k` in state `s`.
    ///
    /// The node first checks the collided-law mass of its intended move
    /// against the threshold, then self-nominates with its escalated
    /// probability. `beacon` holds the broadcast probabilities of all nodes
    /// (entry `k` is ignored) and `u` is a uniform draw in `[0, 1)`.
    pub fn decide(
        &mut self,
        dynamics: &Dynamics,
        k: usize,
        s: NodeState,
        beacon: &[f64],
        u: f64,
    ) -> Decision {
        self.reported_p = 0.0;
        if self.backoff > 0 {
            self.backoff -= 1;
            return Decision::Backoff;
        }
        if s.queue == 0 {
            return Decision::Silent;
        }
        let p = self.effective_p();
        if intended_mass(dynamics, k, s, beacon) < self.threshold {
            self.escalate();
            return Decision::Hold;
        }
        self.reported_p = p;
        if u >= p {
            return Decision::Silent;
        }
        Decision::Transmit {
            modulation: dynamics.energy()[k].modulation.order,
        }
    }

    /// Applies transmission feedback. `u` in `[0, 1)` draws the backoff
    /// length on collision.
    pub fn feedback(&mut self, outcome: Feedback, window: u32, u: f64) {
        match outcome {
            Feedback::Collided => {
                self.escalate();
                self.backoff = 1 + ((u * window as f64) as u32).min(window - 1);
            }
            Feedback::Delivered | Feedback::Corrupted => self.fail_count = 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn desk() -> NetworkParams {
        NetworkParams::new(3)
    }

    #[test]
    fn empty_queue_never_transmits() {
        let p = desk();
        for d in [
            TxProbDesign::exponential(0.5),
            TxProbDesign::Sigmoid,
            TxProbDesign::gamma_default(),
        ] {
            for e in 0..=5 {
                assert_eq!(tx_prob(&d, e, 0, &p).unwrap(), 0.0, "{d:?} e={e}");
            }
        }
    }

    #[test]
    fn sigmoid_full_queue_flat_battery() {
        let p = desk();
        assert!((tx_prob(&TxProbDesign::Sigmoid, 0, 6, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_value() {
        let p = desk();
        let d = TxProbDesign::Exponential {
            kappa_q: 0.5,
            kappa_e: 0.3,
        };
        let want = (1.0 - (-1.5f64).exp()) * (-0.6f64).exp();
        let got = tx_prob(&d, 2, 3, &p).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.426_35).abs() < 1e-5);
    }

    #[test]
    fn gamma_flat_battery_is_certain() {
        let p = desk();
        assert_eq!(
            tx_prob(&TxProbDesign::gamma_default(), 0, 1, &p).unwrap(),
            1.0
        );
    }

    #[test]
    fn invalid_designs() {
        let p = desk();
        assert!(tx_prob(&TxProbDesign::exponential(0.0), 1, 1, &p).is_err());
        let g = TxProbDesign::Gamma {
            shape: -1.0,
            scale: 1.0,
        };
        assert!(tx_prob(&g, 1, 1, &p).is_err());
        assert!(tx_prob(&TxProbDesign::Sigmoid, 6, 1, &p).is_err());
    }

    #[test]
    fn collision_cases() {
        assert_eq!(collision_prob(0, &[0.9, 0.0, 0.0]), 0.0);
        assert_eq!(collision_prob(0, &[0.0, 1.0, 0.3]), 1.0);
        assert_eq!(collision_prob(2, &[0.5, 0.5, 0.9]), 0.75);
    }

    #[test]
    fn no_competitors_reduces_to_scheduled_law() {
        let mut p = desk();
        p.arrival_prob = 0.3;
        let d = Dynamics::new(&p).unwrap();
        let s = NodeState::new(3, 2);
        let c = collided_transition(&d, 0, s, &[0.7, 0.0, 0.0]);
        let m = crate::mdp::selected_transition(&d, 0, s);
        assert_eq!(c.len(), m.len());
        for (x, pm) in &m {
            let pc: f64 = c.iter().filter(|(y, _)| y == x).map(|(_, p)| p).sum();
            assert!((pc - pm).abs() < 1e-15);
        }
    }

    #[test]
    fn printed_cases_miss_collided_arrival_mass() {
        let mut p = desk();
        p.arrival_prob = 0.3;
        let d = Dynamics::new(&p).unwrap();
        let s = NodeState::new(3, 2);
        let beacon = [0.0, 0.5, 0.5];
        let br = collided_branches(&d, 0, s, &beacon);
        let all: f64 = br.iter().map(|b| b.prob).sum();
        let printed: f64 = br
            .iter()
            .filter(|b| b.case != CollidedCase::CollidedArrival)
            .map(|b| b.prob)
            .sum();
        let succ = d.success_prob();
        assert!((all - 1.0).abs() < 1e-12);
        assert!((printed - (1.0 - 0.75 * (1.0 - succ) * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn certain_collision_expansion() {
        let mut p = desk();
        p.arrival_prob = 0.0;
        let d = Dynamics::new(&p).unwrap();
        let s = NodeState::new(3, 2);
        let e = d.energy()[0];
        let succ = d.success_prob();
        let c = collided_transition(&d, 0, s, &[0.0, 1.0, 0.0]);
        let down = 3 - e.tx_levels;
        let stay = c
            .iter()
            .find(|(x, _)| *x == NodeState::new(down, 2))
            .unwrap()
            .1;
        let deq = c
            .iter()
            .find(|(x, _)| *x == NodeState::new(down, 1))
            .unwrap()
            .1;
        assert!((stay - (1.0 - succ)).abs() < 1e-15);
        assert!((deq - succ).abs() < 1e-15);
    }

    #[test]
    fn escalation_caps_at_one() {
        let mut c = EqatNodeCtl::new(&EqatConfig::default());
        c.base_p = 0.4;
        c.fail_count = 3;
        assert_eq!(c.effective_p(), 1.0);
        c.fail_count = 1;
        assert!((c.effective_p() - 0.6).abs() < 1e-15);
        c.fail_count = MAX_FAILS;
        assert_eq!(c.effective_p(), 1.0);
        c.base_p = 0.0;
        assert_eq!(c.effective_p(), 0.0);
    }

    #[test]
    fn success_resets_escalation() {
        let p = desk();
        let mut c = EqatNodeCtl::new(&EqatConfig::default());
        let s = NodeState::new(2, 3);
        c.refresh(&TxProbDesign::Sigmoid, s, &p);
        let base = c.effective_p();
        c.fail_count = 4;
        c.feedback(Feedback::Delivered, 8, 0.0);
        assert_eq!(c.fail_count, 0);
        assert_eq!(c.effective_p(), base);
    }

    #[test]
    fn collision_backs_off_within_window() {
        let mut c = EqatNodeCtl::new(&EqatConfig::default());
        c.feedback(Feedback::Collided, 8, 0.0);
        assert_eq!((c.backoff, c.fail_count), (1, 1));
        c.feedback(Feedback::Collided, 8, 0.999_999);
        assert_eq!((c.backoff, c.fail_count), (8, 2));
    }

    #[test]
    fn zero_threshold_transmits_when_nominated() {
        let p = desk();
        let d = Dynamics::new(&p).unwrap();
        let cfg = EqatConfig {
            threshold: 0.0,
            ..EqatConfig::default()
        };
        let mut c = EqatNodeCtl::new(&cfg);
        let s = NodeState::new(2, 3);
        c.refresh(&cfg.design, s, &p);
        let beacon = vec![0.0, 1.0, 1.0];
        assert!(matches!(
            c.decide(&d, 0, s, &beacon, 0.0),
            Decision::Transmit { .. }
        ));
        assert_eq!(c.decide(&d, 0, s, &beacon, 0.999_999), Decision::Silent);
    }

    #[test]
    fn gate_holds_and_escalates() {
        let p = desk();
        let d = Dynamics::new(&p).unwrap();
        let mut c = EqatNodeCtl::new(&EqatConfig::default());
        let s = NodeState::new(2, 3);
        c.refresh(&TxProbDesign::Sigmoid, s, &p);
        let beacon = vec![0.0, 1.0, 0.0];
        assert_eq!(c.decide(&d, 0, s, &beacon, 0.0), Decision::Hold);
        assert_eq!(c.fail_count, 1);
    }
}
