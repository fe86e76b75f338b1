use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Violation {
    NoNodes,
    GainCount {
        expected: usize,
        found: usize,
    },
    BerOutOfRange(f64),
    LogRatioNotPositive {
        kappa1: f64,
        ber_target: f64,
    },
    Kappa2NotPositive(f64),
    NegativePower(f64),
    EfficiencyOutOfRange(f64),
    BandwidthNotPositive(f64),
    SlotLenNotPositive(f64),
    ArrivalPeriod {
        slot_len: f64,
        arrival_period: f64,
    },
    ArrivalProbOutOfRange(f64),
    NoBatteryLevels,
    QuantumNotPositive(f64),
    CapacityMismatch {
        capacity: f64,
        levels: u32,
        quantum: f64,
    },
    NoModulation,
    NoQueue,
    NoPacketBits,
    GainNotPositive {
        node: usize,
        gain: f64,
    },
    PacketDoesNotFit {
        capacity_bits: f64,
        packet_bits: u32,
    },
    DiscountOutOfRange(f64),
    ToleranceNotPositive(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoNodes => write!(f, "network must have at least one node"),
            GainCount { expected, found } => {
                write!(f, "expected {expected} channel gains, found {found}")
            }
            BerOutOfRange(v) => write!(f, "ber_target {v} must lie in (0, 1)"),
            LogRatioNotPositive { kappa1, ber_target } => write!(
                f,
                "ln(κ₁/ε) must be positive (kappa1 = {kappa1}, ber_target = {ber_target})"
            ),
            Kappa2NotPositive(v) => write!(f, "kappa2 {v} must be positive"),
            NegativePower(v) => write!(f, "bs_power {v} must be non-negative"),
            EfficiencyOutOfRange(v) => write!(f, "transfer_efficiency {v} must lie in [0, 1]"),
            BandwidthNotPositive(v) => write!(f, "bandwidth {v} must be positive"),
            SlotLenNotPositive(v) => write!(f, "slot_len {v} must be positive"),
            ArrivalPeriod {
                slot_len,
                arrival_period,
            } => write!(
                f,
                "slot_len {slot_len} must be a positive integer multiple of arrival_period {arrival_period}"
            ),
            ArrivalProbOutOfRange(v) => write!(f, "arrival_prob {v} must lie in [0, 1]"),
            NoBatteryLevels => write!(f, "battery_levels must be at least 1"),
            QuantumNotPositive(v) => write!(f, "battery_quantum {v} must be positive"),
            CapacityMismatch {
                capacity,
                levels,
                quantum,
            } => write!(
                f,
                "battery_capacity {capacity} must equal battery_levels × battery_quantum = {levels} × {quantum}"
            ),
            NoModulation => write!(f, "max_modulation must be at least 1"),
            NoQueue => write!(f, "queue_cap must be at least 1"),
            NoPacketBits => write!(f, "packet_bits must be at least 1"),
            GainNotPositive { node, gain } => {
                write!(f, "channel gain of node {node} is {gain}, must be positive and finite")
            }
            PacketDoesNotFit {
                capacity_bits,
                packet_bits,
            } => write!(
                f,
                "slot carries at most {capacity_bits} bits at the highest modulation, packet has {packet_bits}"
            ),
            DiscountOutOfRange(v) => write!(f, "discount {v} must lie in [0, 1)"),
            ToleranceNotPositive(v) => write!(f, "vi_tol {v} must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid network parameters: {}", join(.0))]
    InvalidParams(Vec<Violation>),
    #[error("state component out of range: {0}")]
    StateOutOfRange(String),
    #[error("node index {node} out of range for {n_nodes} nodes")]
    NodeOutOfRange { node: usize, n_nodes: usize },
    #[error("modulation order {rho} outside 1..={max}")]
    ModulationOutOfRange { rho: u32, max: u32 },
    #[error("no modulation order up to {max} fits {packet_bits} bits into one slot")]
    ModulationInfeasible { max: u32, packet_bits: u32 },
    #[error("state space of {states} states exceeds the budget of {budget}")]
    StateBudgetExceeded { states: String, budget: usize },
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("invalid transmission-probability design: {0}")]
    InvalidDesign(String),
    #[error("strategy does not fit the scenario: {0}")]
    StrategyMismatch(String),
}

fn join(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{x}");
    }
    out
}

pub type Result<T> = core::result::Result<T, Error>;
