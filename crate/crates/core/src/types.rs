//! Model parameters and state types shared by every other module.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result, Violation};

/// Physical and protocol constants of a homogeneous network.
///
/// Every node shares packet size, BER target, buffer and battery sizes and
/// arrival law; only the channel gain differs per node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkParams {
    pub n_nodes: usize,
    /// Packet length in bits.
    pub packet_bits: u32,
    /// Required bit error rate.
    pub ber_target: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Base station output power in watts.
    pub bs_power: f64,
    /// Fraction of output power that reaches the node's receiver.
    pub transfer_efficiency: f64,
    /// Uplink bandwidth in hertz.
    pub bandwidth: f64,
    /// Scheduling interval in seconds.
    pub slot_len: f64,
    /// Seconds between packet arrival opportunities.
    pub arrival_period: f64,
    /// Probability that an arrival opportunity produces a packet.
    pub arrival_prob: f64,
    /// Highest battery level; levels run over `0..=battery_levels`.
    pub battery_levels: u32,
    /// Joules per battery level.
    pub battery_quantum: f64,
    /// Joules; always `battery_levels * battery_quantum`.
    pub battery_capacity: f64,
    /// Buffer size in packets.
    pub queue_cap: u32,
    /// Highest modulation order.
    pub max_modulation: u32,
    /// Per-node effective power gain `‖h‖²`.
    pub channel_gain: Vec<f64>,
    pub discount: f64,
    /// Stopping tolerance of value iteration.
    pub vi_tol: f64,
}

impl NetworkParams {
    /// Desk-scale defaults: K=5, Q=6, M=5, L=256 bits, κ₁=0.2, κ₂=3,
    /// ε=5×10⁻⁴, P_e=3 W, δ=0.4, W=250 kHz, a 10 ms slot with one arrival
    /// opportunity at λ=0.1, 4 mJ per battery level and unit channel gains.
    pub fn new(n_nodes: usize) -> Self {
        let battery_levels = 5;
        let battery_quantum = 4e-3;
        Self {
            n_nodes,
            packet_bits: 256,
            ber_target: 5e-4,
            kappa1: 0.2,
            kappa2: 3.0,
            bs_power: 3.0,
            transfer_efficiency: 0.4,
            bandwidth: 250e3,
            slot_len: 0.01,
            arrival_period: 0.01,
            arrival_prob: 0.1,
            battery_levels,
            battery_quantum,
            battery_capacity: battery_levels as f64 * battery_quantum,
            queue_cap: 6,
            max_modulation: 5,
            channel_gain: vec![1.0; n_nodes],
            discount: 0.95,
            vi_tol: 1e-6,
        }
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Self {
        self.n_nodes = gains.len();
        self.channel_gain = gains;
        self
    }

    /// Sets levels and quantum and keeps the capacity consistent.
    pub fn with_battery(mut self, levels: u32, quantum: f64) -> Self {
        self.battery_levels = levels;
        self.battery_quantum = quantum;
        self.battery_capacity = levels as f64 * quantum;
        self
    }

    /// Number of arrival opportunities per slot, `slot_len / arrival_period`.
    ///
    /// Only meaningful for validated parameters.
    pub fn arrivals_per_slot(&self) -> u32 {
        libm::round(self.slot_len / self.arrival_period) as u32
    }

    pub fn state_space(&self) -> StateSpace {
        StateSpace::new(self.n_nodes, self.battery_levels, self.queue_cap)
    }

    /// Collects every violated invariant.
    pub fn validate(&self) -> core::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.n_nodes == 0 {
            v.push(Violation::NoNodes);
        }
        if self.channel_gain.len() != self.n_nodes {
            v.push(Violation::GainCount {
                expected: self.n_nodes,
                found: self.channel_gain.len(),
            });
        }
        let ber_ok = self.ber_target > 0.0 && self.ber_target < 1.0;
        if !ber_ok {
            v.push(Violation::BerOutOfRange(self.ber_target));
        }
        if !(self.kappa1 > self.ber_target) || !(self.kappa1 > 0.0) {
            v.push(Violation::LogRatioNotPositive {
                kappa1: self.kappa1,
                ber_target: self.ber_target,
            });
        }
        if !(self.kappa2 > 0.0) {
            v.push(Violation::Kappa2NotPositive(self.kappa2));
        }
        if !(self.bs_power >= 0.0) {
            v.push(Violation::NegativePower(self.bs_power));
        }
        if !(0.0..=1.0).contains(&self.transfer_efficiency) {
            v.push(Violation::EfficiencyOutOfRange(self.transfer_efficiency));
        }
        if !(self.bandwidth > 0.0) {
            v.push(Violation::BandwidthNotPositive(self.bandwidth));
        }
        if !(self.slot_len > 0.0) {
            v.push(Violation::SlotLenNotPositive(self.slot_len));
        }
        let ratio = self.slot_len / self.arrival_period;
        let integral = ratio.is_finite()
            && ratio >= 1.0 - 1e-9
            && libm::fabs(ratio - libm::round(ratio)) <= 1e-9 * ratio;
        if !(self.arrival_period > 0.0) || !integral {
            v.push(Violation::ArrivalPeriod {
                slot_len: self.slot_len,
                arrival_period: self.arrival_period,
            });
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            v.push(Violation::ArrivalProbOutOfRange(self.arrival_prob));
        }
        if self.battery_levels == 0 {
            v.push(Violation::NoBatteryLevels);
        }
        if !(self.battery_quantum > 0.0) {
            v.push(Violation::QuantumNotPositive(self.battery_quantum));
        }
        let expected = self.battery_levels as f64 * self.battery_quantum;
        if libm::fabs(self.battery_capacity - expected) > 1e-12 * libm::fabs(expected) {
            v.push(Violation::CapacityMismatch {
                capacity: self.battery_capacity,
                levels: self.battery_levels,
                quantum: self.battery_quantum,
            });
        }
        if self.max_modulation == 0 {
            v.push(Violation::NoModulation);
        }
        if self.queue_cap == 0 {
            v.push(Violation::NoQueue);
        }
        if self.packet_bits == 0 {
            v.push(Violation::NoPacketBits);
        }
        for (node, &gain) in self.channel_gain.iter().enumerate() {
            if !(gain > 0.0 && gain.is_finite()) {
                v.push(Violation::GainNotPositive { node, gain });
            }
        }
        let capacity_bits = self.slot_len * self.bandwidth * self.max_modulation as f64;
        if !(capacity_bits >= self.packet_bits as f64) {
            v.push(Violation::PacketDoesNotFit {
                capacity_bits,
                packet_bits: self.packet_bits,
            });
        }
        if !(0.0..1.0).contains(&self.discount) {
            v.push(Violation::DiscountOutOfRange(self.discount));
        }
        if !(self.vi_tol > 0.0) {
            v.push(Violation::ToleranceNotPositive(self.vi_tol));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// [`validate`](Self::validate) folded into the crate error type.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidParams)
    }
}

/// Battery level and queue length of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeState {
    /// Level index in `0..=K`; the charge is rounded down to a level.
    pub battery: u32,
    /// Packets in `0..=Q`.
    pub queue: u32,
}

impl NodeState {
    pub const fn new(battery: u32, queue: u32) -> Self {
        Self { battery, queue }
    }
}

/// States of all nodes, ordered by node index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct JointState(pub Vec<NodeState>);

impl JointState {
    pub fn nodes(&self) -> &[NodeState] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<NodeState>> for JointState {
    fn from(v: Vec<NodeState>) -> Self {
        Self(v)
    }
}

/// The base station's per-slot decision: which node transmits and harvests,
/// and at which modulation order. Node indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub selected: usize,
    pub modulation: u32,
}

/// Mixed-radix enumeration of joint states.
///
/// Each node contributes the digit `battery * (Q + 1) + queue`; node 0 is the
/// least significant digit. Batteries take `K + 1` values (level 0 exists),
/// so the space holds `((K + 1)(Q + 1))^N` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub n_nodes: usize,
    pub battery_levels: u32,
    pub queue_cap: u32,
}

impl StateSpace {
    pub fn new(n_nodes: usize, battery_levels: u32, queue_cap: u32) -> Self {
        Self {
            n_nodes,
            battery_levels,
            queue_cap,
        }
    }

    /// Number of per-node states.
    pub fn radix(&self) -> usize {
        (self.battery_levels as usize + 1) * (self.queue_cap as usize + 1)
    }

    /// Joint state count, `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        u32::try_from(self.n_nodes)
            .ok()
            .and_then(|n| self.radix().checked_pow(n))
    }

    /// Joint state count as a float, for reporting spaces too large to index.
    pub fn size_f64(&self) -> f64 {
        libm::pow(self.radix() as f64, self.n_nodes as f64)
    }

    pub fn node_digit(&self, s: NodeState) -> Result<usize> {
        if s.battery > self.battery_levels || s.queue > self.queue_cap {
            return Err(Error::StateOutOfRange(format!(
                "battery {} (max {}), queue {} (max {})",
                s.battery, self.battery_levels, s.queue, self.queue_cap
            )));
        }
        Ok(s.battery as usize * (self.queue_cap as usize + 1) + s.queue as usize)
    }

    pub fn node_from_digit(&self, digit: usize) -> NodeState {
        let q1 = self.queue_cap as usize + 1;
        NodeState::new((digit / q1) as u32, (digit % q1) as u32)
    }

    pub fn index(&self, s: &JointState) -> Result<usize> {
        if s.len() != self.n_nodes {
            return Err(Error::StateOutOfRange(format!(
                "joint state has {} nodes, expected {}",
                s.len(),
                self.n_nodes
            )));
        }
        let radix = self.radix();
        let mut idx = 0usize;
        for node in s.nodes().iter().rev() {
            idx = idx
                .checked_mul(radix)
                .and_then(|x| x.checked_add(self.node_digit(*node).ok()?))
                .ok_or_else(|| Error::StateOutOfRange(format!("{node:?}")))?;
        }
        Ok(idx)
    }

    pub fn unindex(&self, mut idx: usize) -> Result<JointState> {
        if self.size().is_none_or(|n| idx >= n) {
            return Err(Error::StateOutOfRange(format!("index {idx}")));
        }
        let radix = self.radix();
        let mut nodes = Vec::with_capacity(self.n_nodes);
        for _ in 0..self.n_nodes {
            nodes.push(self.node_from_digit(idx % radix));
            idx /= radix;
        }
        Ok(JointState(nodes))
    }

    /// Writes the node states of `idx` into `out` without allocating.
    pub fn unindex_into(&self, mut idx: usize, out: &mut [NodeState]) {
        let radix = self.radix();
        for slot in out.iter_mut() {
            *slot = self.node_from_digit(idx % radix);
            idx /= radix;
        }
    }
}

/// Ordinal of `s` in the enumerated joint space of `params`.
pub fn state_index(s: &JointState, params: &NetworkParams) -> Result<usize> {
    params.state_space().index(s)
}

pub fn state_unindex(idx: usize, params: &NetworkParams) -> Result<JointState> {
    params.state_space().unindex(idx)
}
