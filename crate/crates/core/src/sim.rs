//! Slotted Monte-Carlo simulation of the network under six strategies.
//!
//! Within a slot, events happen in this order:
//!
//! 1. The strategy nominates transmitter(s). Centralized strategies pick one
//!    node; decentralized nodes decide on their own.
//! 2. A lone nominee with a packet and enough battery sends it; the packet
//!    survives with probability `(1−ε)^L` and delivered packets leave the
//!    queue. The node then harvests (net `Δ𝓔` levels) whether or not the
//!    packet survived. A lone nominee that cannot send is charged for the
//!    whole slot instead.
//! 3. Two or more nominees collide: each loses its transmit energy, the base
//!    station stays idle and nobody harvests. Decentralized nodes then back
//!    off for a uniform number of slots.
//! 4. E-QAT controllers take their feedback.
//! 5. Arrivals: each node gets `T̂/T_λ` arrival opportunities; packets
//!    arriving at a full queue are dropped.
//!
//! Randomness comes from independent ChaCha8 streams per purpose (arrivals,
//! packet errors, contention, backoff, fading). The arrival, packet-error and
//! contention streams draw a fixed number of values per slot, so two
//! strategies run with the same seed see the same arrivals.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::rayleigh_power;
use crate::energy::{apply_levels, NodeEnergy};
use crate::eqat::{tx_prob_unchecked, BeaconSource, Decision, EqatConfig, EqatNodeCtl, Feedback};
use crate::error::{Error, Result};
use crate::mdp::{Dynamics, EhmdpChooser, Policy};
use crate::types::{NetworkParams, NodeState};

#[derive(Debug, Clone)]
pub enum EhmdpMode {
    /// Solved policy over the full joint space.
    Exact(Arc<Policy>),
    /// Per-node lookahead heuristic for spaces too large to solve.
    Approximate,
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Ehmdp(EhmdpMode),
    /// Centralized: longest queue first, ties to the lowest index.
    Fq,
    /// Centralized: uniform among nodes with a packet.
    Rs,
    Eqat(EqatConfig),
    /// Decentralized: every node with a full queue transmits.
    Dfq,
    /// Decentralized: every backlogged node transmits with probability `p_rc`.
    Rc,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ehmdp(EhmdpMode::Exact(_)) => "ehmdp-exact",
            Self::Ehmdp(EhmdpMode::Approximate) => "ehmdp-approx",
            Self::Fq => "fq",
            Self::Rs => "rs",
            Self::Eqat(_) => "eqat",
            Self::Dfq => "dfq",
            Self::Rc => "rc",
        }
    }

    pub fn is_centralized(&self) -> bool {
        matches!(self, Self::Ehmdp(_) | Self::Fq | Self::Rs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub slots: u64,
    /// Contention probability of RC.
    pub p_rc: f64,
    /// D-FQ and RC nodes wait a uniform number of slots in `1..=window`
    /// after a collision.
    pub backoff_window: u32,
    /// Per-slot i.i.d. Rayleigh fading on top of the static gains.
    pub fading: bool,
    /// Starting battery level of every node; `None` starts full.
    pub initial_battery: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slots: 10_000,
            p_rc: 0.2,
            backoff_window: 8,
            fading: false,
            initial_battery: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    BerFail,
    Collision,
    Idle,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::BerFail => "ber_fail",
            Self::Collision => "collision",
            Self::Idle => "idle",
        }
    }
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    pub slot: u64,
    /// Node states at the start of the slot.
    pub nodes: Vec<NodeState>,
    /// Node chosen by a centralized strategy.
    pub selected: Option<usize>,
    pub transmitters: Vec<usize>,
    pub outcome: Outcome,
    /// Battery levels added by WPT (after clamping).
    pub energy_levels: u32,
}

/// Packet counters of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunMetrics {
    pub slots: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    /// Packets abandoned after collisions; backoff never abandons, so this
    /// stays zero.
    pub dropped_collision_retries_exhausted: u64,
    pub in_queue_final: u64,
    pub collisions: u64,
    pub ber_failures: u64,
}

impl RunMetrics {
    /// Delivered packets.
    pub fn throughput(&self) -> u64 {
        self.delivered
    }

    /// Delivered packets per slot.
    pub fn throughput_pps(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.delivered as f64 / self.slots as f64
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped_overflow + self.dropped_collision_retries_exhausted
    }

    /// Dropped over generated packets; zero when nothing was generated.
    pub fn loss_rate(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.dropped() as f64 / self.generated as f64
        }
    }

    /// Every generated packet is delivered, dropped or still queued.
    pub fn is_conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped() + self.in_queue_final
    }
}

struct Streams {
    arrivals: ChaCha8Rng,
    ber: ChaCha8Rng,
    contention: ChaCha8Rng,
    backoff: ChaCha8Rng,
    fading: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |i: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i);
            r
        };
        Self {
            arrivals: stream(0),
            ber: stream(1),
            contention: stream(2),
            backoff: stream(3),
            fading: stream(4),
        }
    }
}

enum Scheduler {
    Ehmdp(EhmdpChooser),
    Fq,
    Rs,
    Eqat {
        cfg: EqatConfig,
        ctl: Vec<EqatNodeCtl>,
    },
    Dfq,
    Rc,
}

/// One simulated network.
pub struct Simulator {
    params: NetworkParams,
    dynamics: Dynamics,
    scheduler: Scheduler,
    config: SimConfig,
    nodes: Vec<NodeState>,
    rng: Streams,
    slot: u64,
    metrics: RunMetrics,
    contention: Vec<f64>,
    beacon: Vec<f64>,
    backoff: Vec<u32>,
}

impl Simulator {
    pub fn new(
        params: &NetworkParams,
        strategy: &Strategy,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self> {
        let dynamics = Dynamics::new(params)?;
        if !(0.0..=1.0).contains(&config.p_rc) {
            return Err(Error::StrategyMismatch(alloc::format!(
                "p_rc {} must lie in [0, 1]",
                config.p_rc
            )));
        }
        if config.backoff_window == 0 {
            return Err(Error::StrategyMismatch(
                "backoff window must be at least 1".into(),
            ));
        }
        let scheduler = match strategy {
            Strategy::Ehmdp(EhmdpMode::Exact(policy)) => {
                Scheduler::Ehmdp(EhmdpChooser::exact(policy.clone(), params)?)
            }
            Strategy::Ehmdp(EhmdpMode::Approximate) => {
                Scheduler::Ehmdp(EhmdpChooser::approximate(params)?)
            }
            Strategy::Fq => Scheduler::Fq,
            Strategy::Rs => Scheduler::Rs,
            Strategy::Eqat(cfg) => {
                cfg.validate()?;
                Scheduler::Eqat {
                    cfg: *cfg,
                    ctl: vec![EqatNodeCtl::new(cfg); params.n_nodes],
                }
            }
            Strategy::Dfq => Scheduler::Dfq,
            Strategy::Rc => Scheduler::Rc,
        };
        let battery = config
            .initial_battery
            .unwrap_or(params.battery_levels)
            .min(params.battery_levels);
        Ok(Self {
            params: params.clone(),
            dynamics,
            scheduler,
            config,
            nodes: vec![NodeState::new(battery, 0); params.n_nodes],
            rng: Streams::new(seed),
            slot: 0,
            metrics: RunMetrics::default(),
            contention: vec![0.0; params.n_nodes],
            beacon: vec![0.0; params.n_nodes],
            backoff: vec![0; params.n_nodes],
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Counters so far, with `in_queue_final` reflecting the current queues.
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            in_queue_final: self.nodes.iter().map(|s| s.queue as u64).sum(),
            ..self.metrics
        }
    }

    fn slot_dynamics(&mut self) -> Option<Dynamics> {
        if !self.config.fading {
            return None;
        }
        let energy = self
            .params
            .channel_gain
            .iter()
            .map(|&g| {
                let g = g * rayleigh_power(&mut self.rng.fading);
                // A deep fade can leave no feasible order; the static gain's
                // bookkeeping is the fallback.
                NodeEnergy::at_gain(&self.params, g.max(f64::MIN_POSITIVE))
            })
            .collect::<Result<Vec<_>>>()
            .unwrap_or_else(|_| self.dynamics.energy().to_vec());
        Some(Dynamics::with_energy(&self.params, energy))
    }

    /// Advances one slot.
    pub fn step(&mut self) -> SlotTrace {
        let faded = self.slot_dynamics();
        let dynamics = faded.as_ref().unwrap_or(&self.dynamics);
        let n = self.params.n_nodes;
        let k_max = self.params.battery_levels;
        let q_max = self.params.queue_cap;
        let start = self.nodes.clone();

        for u in self.contention.iter_mut() {
            *u = self.rng.contention.random();
        }
        let u_ber: f64 = self.rng.ber.random();

        let mut selected = None;
        let mut transmitters = Vec::new();
        match &mut self.scheduler {
            Scheduler::Ehmdp(chooser) => selected = Some(chooser.choose(&self.nodes)),
            Scheduler::Fq => {
                let mut best = 0;
                for (i, s) in self.nodes.iter().enumerate() {
                    if s.queue > self.nodes[best].queue {
                        best = i;
                    }
                }
                selected = Some(best);
            }
            Scheduler::Rs => {
                let eligible: Vec<usize> = (0..n).filter(|&i| self.nodes[i].queue >= 1).collect();
                let pool = if eligible.is_empty() {
                    n
                } else {
                    eligible.len()
                };
                let pick = ((self.contention[0] * pool as f64) as usize).min(pool - 1);
                selected = Some(if eligible.is_empty() {
                    pick
                } else {
                    eligible[pick]
                });
            }
            Scheduler::Eqat { cfg, ctl } => {
                for (i, b) in self.beacon.iter_mut().enumerate() {
                    let s = self.nodes[i];
                    *b = match cfg.beacon {
                        BeaconSource::Design => {
                            tx_prob_unchecked(&cfg.design, s.battery, s.queue, &self.params)
                        }
                        BeaconSource::Reported => ctl[i].reported_p,
                    };
                }
                for i in 0..n {
                    let s = self.nodes[i];
                    ctl[i].refresh(&cfg.design, s, &self.params);
                    if let Decision::Transmit { .. } =
                        ctl[i].decide(dynamics, i, s, &self.beacon, self.contention[i])
                    {
                        transmitters.push(i);
                    }
                }
            }
            Scheduler::Dfq | Scheduler::Rc => {
                let dfq = matches!(self.scheduler, Scheduler::Dfq);
                for i in 0..n {
                    if self.backoff[i] > 0 {
                        self.backoff[i] -= 1;
                        continue;
                    }
                    let q = self.nodes[i].queue;
                    let go = if dfq {
                        q == q_max
                    } else {
                        q >= 1 && self.contention[i] < self.config.p_rc
                    };
                    if go {
                        transmitters.push(i);
                    }
                }
            }
        }

        let mut energy_levels = 0;
        if let Some(k) = selected {
            transmitters.push(k);
        }

        let mut feedback = None;
        let outcome = match transmitters.as_slice() {
            [] => Outcome::Idle,
            &[k] if !dynamics.transmits(k, self.nodes[k]) => {
                // Nothing to send or too little energy to send it: the whole
                // slot goes to charging.
                let before = self.nodes[k].battery;
                let after = apply_levels(before, dynamics.energy()[k].harvest_only, k_max);
                self.nodes[k].battery = after;
                energy_levels = after.saturating_sub(before);
                transmitters.clear();
                Outcome::Idle
            }
            &[k] => {
                let s = &mut self.nodes[k];
                let ok = u_ber < dynamics.success_prob();
                if ok {
                    s.queue -= 1;
                    self.metrics.delivered += 1;
                } else {
                    self.metrics.ber_failures += 1;
                }
                let before = s.battery;
                s.battery = apply_levels(before, dynamics.energy()[k].delta, k_max);
                energy_levels = s.battery.saturating_sub(before);
                feedback = Some(if ok {
                    Feedback::Delivered
                } else {
                    Feedback::Corrupted
                });
                if ok {
                    Outcome::Success
                } else {
                    Outcome::BerFail
                }
            }
            many => {
                for &k in many {
                    let cost = dynamics.energy()[k].tx_levels as i64;
                    self.nodes[k].battery = apply_levels(self.nodes[k].battery, -cost, k_max);
                }
                self.metrics.collisions += 1;
                feedback = Some(Feedback::Collided);
                Outcome::Collision
            }
        };

        if let Some(fb) = feedback {
            for &k in &transmitters {
                let u = if fb == Feedback::Collided {
                    self.rng.backoff.random()
                } else {
                    0.0
                };
                match &mut self.scheduler {
                    Scheduler::Eqat { cfg, ctl } => ctl[k].feedback(fb, cfg.backoff_window, u),
                    Scheduler::Dfq | Scheduler::Rc if fb == Feedback::Collided => {
                        self.backoff[k] = backoff_slots(u, self.config.backoff_window);
                    }
                    _ => {}
                }
            }
        }

        let opportunities = self.params.arrivals_per_slot();
        let lambda = self.params.arrival_prob;
        for s in self.nodes.iter_mut() {
            for _ in 0..opportunities {
                let u: f64 = self.rng.arrivals.random();
                if u < lambda {
                    self.metrics.generated += 1;
                    if s.queue < q_max {
                        s.queue += 1;
                    } else {
                        self.metrics.dropped_overflow += 1;
                    }
                }
            }
        }

        let trace = SlotTrace {
            slot: self.slot,
            nodes: start,
            selected,
            transmitters,
            outcome,
            energy_levels,
        };
        self.slot += 1;
        self.metrics.slots = self.slot;
        trace
    }

    /// Runs the configured number of slots.
    pub fn run(mut self) -> RunMetrics {
        for _ in 0..self.config.slots {
            self.step();
        }
        self.metrics()
    }

    /// Runs the configured number of slots and keeps every slot's trace.
    pub fn run_traced(mut self) -> (RunMetrics, Vec<SlotTrace>) {
        let traces = (0..self.config.slots).map(|_| self.step()).collect();
        (self.metrics(), traces)
    }
}

/// Backoff length in `1..=window` from a uniform draw `u` in `[0, 1)`.
pub fn backoff_slots(u: f64, window: u32) -> u32 {
    1 + ((u * window as f64) as u32).min(window - 1)
}

/// Deterministic run for one seed.
pub fn run(
    params: &NetworkParams,
    strategy: &Strategy,
    config: SimConfig,
    seed: u64,
) -> Result<RunMetrics> {
    Ok(Simulator::new(params, strategy, config, seed)?.run())
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            stderr: libm::sqrt(var / n as f64),
        }
    }
}

/// Per-seed metrics reduced to means and standard errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub runs: usize,
    pub generated: Summary,
    pub delivered: Summary,
    pub dropped: Summary,
    pub throughput_pps: Summary,
    pub loss_rate: Summary,
}

impl Aggregate {
    pub fn of(runs: &[RunMetrics]) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| Summary::of(runs.iter().map(f));
        Self {
            runs: runs.len(),
            generated: col(|m| m.generated as f64),
            delivered: col(|m| m.delivered as f64),
            dropped: col(|m| m.dropped() as f64),
            throughput_pps: col(|m| m.throughput_pps()),
            loss_rate: col(|m| m.loss_rate()),
        }
    }
}

/// Runs every seed in turn and aggregates.
pub fn run_seeds(
    params: &NetworkParams,
    strategy: &Strategy,
    config: SimConfig,
    seeds: &[u64],
) -> Result<(Vec<RunMetrics>, Aggregate)> {
    let runs = seeds
        .iter()
        .map(|&s| run(params, strategy, config, s))
        .collect::<Result<Vec<_>>>()?;
    let agg = Aggregate::of(&runs);
    Ok((runs, agg))
}
