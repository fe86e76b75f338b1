//! Power, modulation and battery-quantum arithmetic.
//!
//! All functions are pure in the parameters. Node-indexed entry points look
//! up the node's channel gain and defer to the `*_at_gain` variants, which
//! the simulator also uses for faded per-slot gains.

use crate::error::{Error, Result};
use crate::types::NetworkParams;

/// Optimal modulation of a node and the energy bookkeeping of one
/// collision-free scheduled slot at that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationDecision {
    /// Modulation order ρ* in `1..=M`.
    pub order: u32,
    /// Harvested minus transmit energy over the slot, joules.
    pub net_energy_gain: f64,
    /// Seconds spent on the uplink, `L / (ρ* W)`.
    pub tx_duration: f64,
    /// Joules spent on the uplink.
    pub tx_energy: f64,
}

fn gain(params: &NetworkParams, node: usize) -> Result<f64> {
    params
        .channel_gain
        .get(node)
        .copied()
        .ok_or(Error::NodeOutOfRange {
            node,
            n_nodes: params.channel_gain.len(),
        })
}

/// Received WPT power `δ · P_e · ‖h‖²`.
pub fn transfer_power_at_gain(params: &NetworkParams, gain: f64) -> f64 {
    params.transfer_efficiency * params.bs_power * gain
}

pub fn transfer_power(params: &NetworkParams, node: usize) -> Result<f64> {
    Ok(transfer_power_at_gain(params, gain(params, node)?))
}

/// `ln(κ₁/ε) / κ₂`, the BER-dependent factor of the transmit power.
pub fn ber_power_factor(params: &NetworkParams) -> f64 {
    libm::log(params.kappa1 / params.ber_target) / params.kappa2
}

fn check_order(params: &NetworkParams, rho: u32) -> Result<()> {
    if rho == 0 || rho > params.max_modulation {
        return Err(Error::ModulationOutOfRange {
            rho,
            max: params.max_modulation,
        });
    }
    Ok(())
}

fn transmit_power_unchecked(params: &NetworkParams, gain: f64, rho: f64) -> f64 {
    ber_power_factor(params) * (libm::exp2(rho) - 1.0) / gain
}

/// Transmit power meeting the BER target at order `rho`.
pub fn transmit_power_at_gain(params: &NetworkParams, gain: f64, rho: u32) -> Result<f64> {
    check_order(params, rho)?;
    Ok(transmit_power_unchecked(params, gain, rho as f64))
}

pub fn transmit_power(params: &NetworkParams, node: usize, rho: u32) -> Result<f64> {
    transmit_power_at_gain(params, gain(params, node)?, rho)
}

/// Uplink airtime `L / (ρ W)`.
pub fn tx_duration(params: &NetworkParams, rho: u32) -> f64 {
    params.packet_bits as f64 / (rho as f64 * params.bandwidth)
}

/// Net energy of a scheduled slot at order `rho`:
/// `(T̂ − L/(ρW))·P^E − (L/(ρW))·P^D(ρ)`.
pub fn net_energy_at_gain(params: &NetworkParams, gain: f64, rho: u32) -> f64 {
    let tau = tx_duration(params, rho);
    (params.slot_len - tau) * transfer_power_at_gain(params, gain)
        - tau * transmit_power_unchecked(params, gain, rho as f64)
}

/// Smallest order whose airtime fits into one slot.
pub fn min_feasible_order(params: &NetworkParams) -> Result<u32> {
    let need = params.packet_bits as f64 / (params.slot_len * params.bandwidth);
    let mut rho = libm::ceil(need - 1e-12).max(1.0) as u32;
    // Guard against rounding in the division.
    while rho > 1 && tx_duration(params, rho - 1) <= params.slot_len {
        rho -= 1;
    }
    while rho <= params.max_modulation && tx_duration(params, rho) > params.slot_len {
        rho += 1;
    }
    if rho > params.max_modulation {
        return Err(Error::ModulationInfeasible {
            max: params.max_modulation,
            packet_bits: params.packet_bits,
        });
    }
    Ok(rho)
}

/// Left-hand side of the first-order condition, `ρ 2^ρ ln 2 − 2^ρ`.
fn foc_lhs(rho: f64) -> f64 {
    let p = libm::exp2(rho);
    rho * p * core::f64::consts::LN_2 - p
}

const BISECTION_TOL: f64 = 1e-6;

/// Continuous stationary point of the net-energy objective.
///
/// Solves `ρ 2^ρ ln 2 − 2^ρ = P^E ‖h‖² / (ln(κ₁/ε)/κ₂) − 1` by bisection on
/// `[0, M + 1]`. The left side is −1 at ρ = 0 and strictly increasing for
/// ρ > 0, so the root is unique; roots beyond `M + 1` are reported as
/// `M + 1`.
pub fn stationary_order(params: &NetworkParams, gain: f64) -> f64 {
    let rhs = transfer_power_at_gain(params, gain) * gain / ber_power_factor(params) - 1.0;
    let mut lo = 0.0;
    let mut hi = params.max_modulation as f64 + 1.0;
    if foc_lhs(hi) <= rhs {
        return hi;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if foc_lhs(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Order maximizing the net slot energy over the feasible orders.
///
/// The objective is unimodal in ρ, so only the two integers around the
/// stationary point (clamped into `[ρ_min, M]`) need evaluating. Ties go to
/// the smaller order.
pub fn optimal_modulation_at_gain(params: &NetworkParams, gain: f64) -> Result<ModulationDecision> {
    let lo = min_feasible_order(params)?;
    let hi = params.max_modulation;
    let root = stationary_order(params, gain);
    let clamp = |r: f64| (r.max(0.0) as u32).clamp(lo, hi);
    let a = clamp(libm::floor(root));
    let b = clamp(libm::ceil(root));
    let (ja, jb) = (
        net_energy_at_gain(params, gain, a),
        net_energy_at_gain(params, gain, b),
    );
    // a <= b, so ties keep the smaller order.
    let order = if jb > ja { b } else { a };
    Ok(decision(params, gain, order))
}

pub fn optimal_modulation(params: &NetworkParams, node: usize) -> Result<ModulationDecision> {
    optimal_modulation_at_gain(params, gain(params, node)?)
}

fn decision(params: &NetworkParams, gain: f64, order: u32) -> ModulationDecision {
    let tx_duration = tx_duration(params, order);
    ModulationDecision {
        order,
        net_energy_gain: net_energy_at_gain(params, gain, order),
        tx_duration,
        tx_energy: tx_duration * transmit_power_unchecked(params, gain, order as f64),
    }
}

/// Whole battery levels contained in `energy`, rounded down (may be negative).
pub fn quantize_levels(energy: f64, quantum: f64) -> i64 {
    libm::floor(energy / quantum) as i64
}

/// Quantized net battery change of a scheduled collision-free slot.
pub fn harvest_delta(params: &NetworkParams, node: usize) -> Result<i64> {
    let d = optimal_modulation(params, node)?;
    Ok(quantize_levels(d.net_energy_gain, params.battery_quantum))
}

/// Probability that all `L` bits arrive intact, `(1 − ε)^L`.
pub fn packet_success_prob(params: &NetworkParams) -> f64 {
    success_prob(params.ber_target, params.packet_bits)
}

pub fn success_prob(ber: f64, bits: u32) -> f64 {
    libm::pow(1.0 - ber, bits as f64)
}

/// Per-node battery bookkeeping used by the MDP and the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEnergy {
    pub modulation: ModulationDecision,
    /// Net level change of a scheduled, collision-free transmission slot.
    pub delta: i64,
    /// Levels the battery must hold to transmit; also the levels lost on a
    /// collision (transmit energy spent, nothing harvested).
    pub tx_levels: u32,
    /// Level gain of a slot spent entirely on WPT.
    pub harvest_only: i64,
}

impl NodeEnergy {
    pub fn at_gain(params: &NetworkParams, gain: f64) -> Result<Self> {
        let modulation = optimal_modulation_at_gain(params, gain)?;
        let q = params.battery_quantum;
        Ok(Self {
            modulation,
            delta: quantize_levels(modulation.net_energy_gain, q),
            tx_levels: libm::ceil(modulation.tx_energy / q).max(0.0) as u32,
            harvest_only: quantize_levels(
                params.slot_len * transfer_power_at_gain(params, gain),
                q,
            ),
        })
    }

    pub fn for_node(params: &NetworkParams, node: usize) -> Result<Self> {
        Self::at_gain(params, gain(params, node)?)
    }

    pub fn for_all(params: &NetworkParams) -> Result<alloc::vec::Vec<Self>> {
        (0..params.n_nodes)
            .map(|n| Self::for_node(params, n))
            .collect()
    }

    pub fn can_transmit(&self, battery: u32) -> bool {
        battery >= self.tx_levels
    }
}

/// Adds a signed level change and clamps into `0..=max`.
pub fn apply_levels(battery: u32, delta: i64, max: u32) -> u32 {
    (battery as i64 + delta).clamp(0, max as i64) as u32
}
