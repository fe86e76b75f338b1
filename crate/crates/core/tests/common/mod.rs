//! Closed-form reference kernels written straight from the model equations,
//! independent of the library's implementation. One arrival opportunity
//! per slot.

#![allow(dead_code)]

use std::collections::BTreeMap;

use wpt_sched_core::NetworkParams;

pub struct RefEnergy {
    pub order: u32,
    pub delta: i64,
    pub tx_levels: u32,
    pub harvest_only: i64,
}

pub fn net_energy(p: &NetworkParams, g: f64, rho: u32) -> f64 {
    let tau = p.packet_bits as f64 / (rho as f64 * p.bandwidth);
    let pe = p.transfer_efficiency * p.bs_power * g;
    let pd = (p.kappa1 / p.ber_target).ln() / p.kappa2 * (2f64.powi(rho as i32) - 1.0) / g;
    (p.slot_len - tau) * pe - tau * pd
}

/// Exhaustive argmax over feasible orders, ties to the smaller order.
pub fn brute_order(p: &NetworkParams, g: f64) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for rho in 1..=p.max_modulation {
        let tau = p.packet_bits as f64 / (rho as f64 * p.bandwidth);
        if tau > p.slot_len {
            continue;
        }
        let j = net_energy(p, g, rho);
        if best.is_none_or(|(_, bj)| j > bj) {
            best = Some((rho, j));
        }
    }
    best.map(|b| b.0)
}

pub fn energy(p: &NetworkParams, g: f64) -> RefEnergy {
    let order = brute_order(p, g).expect("feasible");
    let tau = p.packet_bits as f64 / (order as f64 * p.bandwidth);
    let pd = (p.kappa1 / p.ber_target).ln() / p.kappa2 * (2f64.powi(order as i32) - 1.0) / g;
    let pe = p.transfer_efficiency * p.bs_power * g;
    RefEnergy {
        order,
        delta: (net_energy(p, g, order) / p.battery_quantum).floor() as i64,
        tx_levels: (tau * pd / p.battery_quantum).ceil() as u32,
        harvest_only: (p.slot_len * pe / p.battery_quantum).floor() as i64,
    }
}

fn clamp(b: i64, k: u32) -> u32 {
    b.clamp(0, k as i64) as u32
}

/// Next (battery, queue) distribution of the scheduled node.
pub fn selected(p: &NetworkParams, g: f64, b: u32, q: u32) -> BTreeMap<(u32, u32), f64> {
    let e = energy(p, g);
    let s = (1.0 - p.ber_target).powi(p.packet_bits as i32);
    let lam = p.arrival_prob;
    let cap = p.queue_cap;
    let mut out = BTreeMap::new();
    let mut add = |b: u32, q: u32, m: f64| {
        if m > 0.0 {
            *out.entry((b, q.min(cap))).or_insert(0.0) += m;
        }
    };
    if q >= 1 && b >= e.tx_levels {
        let nb = clamp(b as i64 + e.delta, p.battery_levels);
        add(nb, q + 1, (1.0 - s) * lam);
        add(nb, q - 1, s * (1.0 - lam));
        add(nb, q, (1.0 - s) * (1.0 - lam) + s * lam);
    } else {
        let nb = clamp(b as i64 + e.harvest_only, p.battery_levels);
        add(nb, q + 1, lam);
        add(nb, q, 1.0 - lam);
    }
    out
}

pub fn unselected(p: &NetworkParams, b: u32, q: u32) -> BTreeMap<(u32, u32), f64> {
    let mut out = BTreeMap::new();
    let lam = p.arrival_prob;
    for (nq, m) in [((q + 1).min(p.queue_cap), lam), (q, 1.0 - lam)] {
        if m > 0.0 {
            *out.entry((b, nq)).or_insert(0.0) += m;
        }
    }
    out
}

/// Expected drops of a node in one slot.
pub fn drops(p: &NetworkParams, g: f64, b: u32, q: u32, sel: bool) -> f64 {
    if q < p.queue_cap {
        return 0.0;
    }
    let e = energy(p, g);
    let s = (1.0 - p.ber_target).powi(p.packet_bits as i32);
    if sel && b >= e.tx_levels {
        (1.0 - s) * p.arrival_prob
    } else {
        p.arrival_prob
    }
}

/// Joint kernel over per-node (battery, queue) vectors, node 0 first.
pub fn joint(p: &NetworkParams, nodes: &[(u32, u32)], k: usize) -> BTreeMap<Vec<(u32, u32)>, f64> {
    let mut acc: BTreeMap<Vec<(u32, u32)>, f64> = BTreeMap::new();
    acc.insert(Vec::new(), 1.0);
    for (i, &(b, q)) in nodes.iter().enumerate() {
        let d = if i == k {
            selected(p, p.channel_gain[i], b, q)
        } else {
            unselected(p, b, q)
        };
        let mut next = BTreeMap::new();
        for (prefix, m) in &acc {
            for (&s, &pm) in &d {
                let mut v = prefix.clone();
                v.push(s);
                *next.entry(v).or_insert(0.0) += m * pm;
            }
        }
        acc = next;
    }
    acc
}

/// Mixed-radix index, node 0 least significant.
pub fn index(p: &NetworkParams, nodes: &[(u32, u32)]) -> usize {
    let radix = ((p.battery_levels + 1) * (p.queue_cap + 1)) as usize;
    nodes.iter().rev().fold(0, |acc, &(b, q)| {
        acc * radix + (b * (p.queue_cap + 1) + q) as usize
    })
}

pub fn all_states(p: &NetworkParams) -> Vec<Vec<(u32, u32)>> {
    let mut out = vec![Vec::new()];
    for _ in 0..p.n_nodes {
        let mut next = Vec::new();
        for prefix in &out {
            for b in 0..=p.battery_levels {
                for q in 0..=p.queue_cap {
                    let mut v: Vec<(u32, u32)> = prefix.clone();
                    v.push((b, q));
                    next.push(v);
                }
            }
        }
        out = next;
    }
    out
}

/// Small instance: N nodes, K battery levels, Q buffer, M orders.
pub fn small(n: usize, k: u32, q: u32, m: u32) -> NetworkParams {
    let mut p = NetworkParams::new(n).with_battery(k, 4e-3);
    p.queue_cap = q;
    p.max_modulation = m;
    p
}
