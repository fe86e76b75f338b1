//! Experiment configuration.
//!
//! The file is TOML with five optional sections; every key has a default,
//! so an empty file runs the desk-scale sweep. Unknown keys are rejected.
//!
//! ```toml
//! [network]
//! packet_bits = 256
//! ber_target = 5e-4
//! kappa1 = 0.2
//! kappa2 = 3.0
//! bs_power = 3.0              # watts
//! transfer_efficiency = 0.4
//! bandwidth = 250e3           # hertz
//! minislot_len = 1e-3         # seconds
//! arrival_minislots = 10      # T_λ in mini-slots
//! arrival_prob = 0.1
//! battery_levels = 5
//! battery_quantum = 4e-3      # joules per level
//! queue_cap = 6
//! max_modulation = 5
//! discount = 0.95
//! vi_tol = 1e-6
//!
//! [channel]
//! seed = 1                    # deployment draw, shared by all strategies and seeds
//! # gains = [1.0, 0.8]        # explicit per-node gains instead of a draw
//! # uniform_gain = 1.0        # same gain for every node
//! fading = false
//! [channel.path_loss]
//! radius = 50.0
//! min_distance = 20.0
//! ref_distance = 20.0
//! ref_gain = 2.5
//! exponent = 2.0
//!
//! [eqat]
//! designs = [{ kind = "exponential", kappa_q = 0.5, kappa_e = 0.5 }]
//! alpha = 0.5
//! threshold = 0.05
//! backoff_window = 8
//! beacon = "reported"         # or "design"
//!
//! [sim]
//! slots = 10000
//! # horizon_minislots = 400000  # fixed wall-clock horizon; overrides slots
//! p_rc = 0.2
//! backoff_window = 8
//! # initial_battery = 5
//!
//! [experiment]
//! n_nodes = [4, 6, 8, 10]
//! slot_minislots = [10]       # T̂ in mini-slots
//! strategies = ["ehmdp", "fq", "rs", "eqat", "dfq", "rc"]
//! seeds = 20                  # count (0..20) or an explicit list
//! budget = 250000             # largest joint space solved exactly
//! trace = false
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wpt_sched_core::channel::PathLossModel;
use wpt_sched_core::eqat::{BeaconSource, EqatConfig, TxProbDesign};
use wpt_sched_core::mdp::DEFAULT_STATE_BUDGET;
use wpt_sched_core::sim::SimConfig;
use wpt_sched_core::NetworkParams;

use rand::SeedableRng;

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub packet_bits: u32,
    pub ber_target: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub bs_power: f64,
    pub transfer_efficiency: f64,
    pub bandwidth: f64,
    pub minislot_len: f64,
    pub arrival_minislots: u32,
    pub arrival_prob: f64,
    pub battery_levels: u32,
    pub battery_quantum: f64,
    pub queue_cap: u32,
    pub max_modulation: u32,
    pub discount: f64,
    pub vi_tol: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let p = NetworkParams::new(1);
        Self {
            packet_bits: p.packet_bits,
            ber_target: p.ber_target,
            kappa1: p.kappa1,
            kappa2: p.kappa2,
            bs_power: p.bs_power,
            transfer_efficiency: p.transfer_efficiency,
            bandwidth: p.bandwidth,
            minislot_len: 1e-3,
            arrival_minislots: 10,
            arrival_prob: p.arrival_prob,
            battery_levels: p.battery_levels,
            battery_quantum: p.battery_quantum,
            queue_cap: p.queue_cap,
            max_modulation: p.max_modulation,
            discount: p.discount,
            vi_tol: p.vi_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_gain: Option<f64>,
    pub fading: bool,
    pub path_loss: PathLossModel,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            seed: 1,
            gains: None,
            uniform_gain: None,
            fading: false,
            path_loss: PathLossModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqatSection {
    pub designs: Vec<TxProbDesign>,
    pub alpha: f64,
    pub threshold: f64,
    pub backoff_window: u32,
    pub beacon: BeaconSource,
}

impl Default for EqatSection {
    fn default() -> Self {
        let c = EqatConfig::default();
        Self {
            designs: vec![c.design],
            alpha: c.alpha,
            threshold: c.threshold,
            backoff_window: c.backoff_window,
            beacon: c.beacon,
        }
    }
}

impl EqatSection {
    pub fn config(&self, design: TxProbDesign) -> EqatConfig {
        EqatConfig {
            design,
            alpha: self.alpha,
            threshold: self.threshold,
            backoff_window: self.backoff_window,
            beacon: self.beacon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub slots: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_minislots: Option<u64>,
    pub p_rc: f64,
    pub backoff_window: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_battery: Option<u32>,
}

impl Default for SimSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            slots: c.slots,
            horizon_minislots: None,
            p_rc: c.p_rc,
            backoff_window: c.backoff_window,
            initial_battery: c.initial_battery,
        }
    }
}

/// Strategy names accepted in configs and on the command line.
///
/// `ehmdp` solves exactly when the joint space fits the budget and fading is
/// off, and falls back to the approximate chooser otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Ehmdp,
    EhmdpExact,
    EhmdpApprox,
    Fq,
    Rs,
    Eqat,
    Dfq,
    Rc,
}

impl StrategyName {
    pub const ALL: [Self; 6] = [
        Self::Ehmdp,
        Self::Fq,
        Self::Rs,
        Self::Eqat,
        Self::Dfq,
        Self::Rc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ehmdp => "ehmdp",
            Self::EhmdpExact => "ehmdp-exact",
            Self::EhmdpApprox => "ehmdp-approx",
            Self::Fq => "fq",
            Self::Rs => "rs",
            Self::Eqat => "eqat",
            Self::Dfq => "dfq",
            Self::Rc => "rc",
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let all = [
            Self::Ehmdp,
            Self::EhmdpExact,
            Self::EhmdpApprox,
            Self::Fq,
            Self::Rs,
            Self::Eqat,
            Self::Dfq,
            Self::Rc,
        ];
        all.into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(s: &str) -> Result<Vec<StrategyName>, Error> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// A seed count (`0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Self::Count(n) => (0..*n).collect(),
            Self::List(v) => v.clone(),
        }
    }
}

impl FromStr for Seeds {
    type Err = Error;

    /// `a..b` (half-open) or a comma-separated list.
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Config(format!("bad seed list '{s}'"));
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            return Ok(Self::List((a..b).collect()));
        }
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::List)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_nodes: Vec<usize>,
    pub slot_minislots: Vec<u32>,
    pub strategies: Vec<StrategyName>,
    pub seeds: Seeds,
    pub budget: usize,
    pub trace: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_nodes: vec![4, 6, 8, 10],
            slot_minislots: vec![10],
            strategies: StrategyName::ALL.to_vec(),
            seeds: Seeds::Count(20),
            budget: DEFAULT_STATE_BUDGET,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: NetworkSection,
    pub channel: ChannelSection,
    pub eqat: EqatSection,
    pub sim: SimSection,
    pub experiment: ExperimentSection,
}

/// One `(N, T̂)` grid point with its resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_nodes: usize,
    pub slot_minislots: u32,
    pub slots: u64,
    /// `None` when the point is infeasible; see `error`.
    pub params: Option<NetworkParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self, Error> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config, or the config stored in a run manifest when the
    /// file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|x| x == "json") {
            let m: crate::runner::Manifest =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            return Ok(m.config);
        }
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let e = &self.experiment;
        if e.n_nodes.is_empty() || e.slot_minislots.is_empty() || e.strategies.is_empty() {
            return Err(Error::Config(
                "grid needs at least one N, T̂ and strategy".into(),
            ));
        }
        if e.seeds.resolve().is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if e.strategies.contains(&StrategyName::Eqat) && self.eqat.designs.is_empty() {
            return Err(Error::Config("eqat needs at least one design".into()));
        }
        if self.sim.horizon_minislots.is_none() && self.sim.slots == 0 {
            return Err(Error::Config("slots must be positive".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self, slots: u64) -> SimConfig {
        SimConfig {
            slots,
            p_rc: self.sim.p_rc,
            backoff_window: self.sim.backoff_window,
            fading: self.channel.fading,
            initial_battery: self.sim.initial_battery,
        }
    }

    /// Channel gains of an `n`-node deployment.
    pub fn gains(&self, n: usize) -> Result<Vec<f64>, String> {
        let c = &self.channel;
        if let Some(g) = &c.gains {
            if g.len() != n {
                return Err(format!("{} explicit gains for {n} nodes", g.len()));
            }
            return Ok(g.clone());
        }
        if let Some(g) = c.uniform_gain {
            return Ok(vec![g; n]);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.seed);
        Ok(c.path_loss.draw_gains(n, &mut rng))
    }

    pub fn params(&self, n: usize, slot_minislots: u32) -> Result<NetworkParams, String> {
        let w = &self.network;
        let p = NetworkParams::new(n).with_battery(w.battery_levels, w.battery_quantum);
        let p = NetworkParams {
            packet_bits: w.packet_bits,
            ber_target: w.ber_target,
            kappa1: w.kappa1,
            kappa2: w.kappa2,
            bs_power: w.bs_power,
            transfer_efficiency: w.transfer_efficiency,
            bandwidth: w.bandwidth,
            slot_len: slot_minislots as f64 * w.minislot_len,
            arrival_period: w.arrival_minislots as f64 * w.minislot_len,
            arrival_prob: w.arrival_prob,
            queue_cap: w.queue_cap,
            max_modulation: w.max_modulation,
            discount: w.discount,
            vi_tol: w.vi_tol,
            ..p
        }
        .with_gains(self.gains(n)?);
        p.check().map_err(|e| e.to_string())?;
        if !slot_minislots.is_multiple_of(w.arrival_minislots.max(1)) {
            return Err(format!(
                "slot of {slot_minislots} mini-slots is not a multiple of the arrival period {}",
                w.arrival_minislots
            ));
        }
        Ok(p)
    }

    pub fn slots_for(&self, slot_minislots: u32) -> u64 {
        match self.sim.horizon_minislots {
            Some(h) => h / slot_minislots.max(1) as u64,
            None => self.sim.slots,
        }
    }

    /// Every `(N, T̂)` combination in grid order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &n in &self.experiment.n_nodes {
            for &t in &self.experiment.slot_minislots {
                let slots = self.slots_for(t);
                let (params, error) = match self.params(n, t) {
                    Ok(p) if slots == 0 => (Some(p), Some("horizon shorter than one slot".into())),
                    Ok(p) => (Some(p), None),
                    Err(e) => (None, Some(e)),
                };
                out.push(GridPoint {
                    n_nodes: n,
                    slot_minislots: t,
                    slots,
                    params,
                    error,
                });
            }
        }
        out
    }
}
