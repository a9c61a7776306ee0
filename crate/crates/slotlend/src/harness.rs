//! Scenario configuration, run reports, paired baseline/lending comparison,
//! and the α sweep that produces the figure tables.
//!
//! Everything here serializes to flat, line-oriented text with a fixed field
//! order, because reproducibility is checked as byte equality. Config files
//! are `key = value` (one per line, `#` comments, unknown keys rejected);
//! reports and sweep summaries are documented key-value schemas; the per-
//! figure tables are plain CSV.
//!
//! A comparison is only meaningful between runs that shared topology,
//! coloring, and arrival streams — i.e. the same config and seed up to the
//! `alpha` and `lending_enabled` knobs. `compare` enforces that and
//! additionally cross-checks that per-node sensed counts are identical,
//! which they must be when the pairing is wired correctly (arrivals never
//! depend on protocol behavior).

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::engine::{self, SimError};
use crate::topology::NodeId;
use crate::traffic::{stream_label, subseed};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("config field `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

/// Everything a run needs. Rates are per minute; they are converted to
/// per-slot internally once the frame length (and so the slot duration) is
/// known.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub area_side: f64,
    pub radius: f64,
    pub rounds: u64,
    /// Slot length in milliseconds; `None` picks 1/χ so a frame is 1 ms.
    pub slot_duration: Option<f64>,
    pub lender_lambda_range: (f64, f64),
    pub sender_lambda_range: (f64, f64),
    pub lender_fraction: f64,
    pub m_size: usize,
    pub f_reserved: usize,
    pub alpha: f64,
    pub lending_enabled: bool,
    pub cancel_sleep_on_no_interest: bool,
    pub seed: u64,
    pub replications: u32,
}

impl Default for ScenarioConfig {
    /// Desk-scale defaults: a hundred nodes, a couple hundred thousand
    /// slots, and two rate classes roughly four decades apart. Senders see
    /// one to two arrivals per frame against a five-packet buffer, so the
    /// baseline actually drops packets and an extra slot is worth having;
    /// lenders see a few arrivals per minute, so at `alpha >= 1` a lease
    /// comfortably outlives the run and the lender sleeps through it.
    fn default() -> ScenarioConfig {
        ScenarioConfig {
            n: 100,
            area_side: 1000.0,
            radius: 200.0,
            rounds: 200_000,
            slot_duration: None,
            lender_lambda_range: (4.0, 8.0),
            sender_lambda_range: (60_000.0, 120_000.0),
            lender_fraction: 0.5,
            m_size: 5,
            f_reserved: 0,
            alpha: 1.0,
            lending_enabled: true,
            cancel_sleep_on_no_interest: false,
            seed: 42,
            replications: 10,
        }
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n > u32::MAX as usize {
            return Err(invalid("n", format!("node count {} out of range", self.n)));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(invalid("area_side", "must be positive and finite"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", "must be positive and finite"));
        }
        if let Some(d) = self.slot_duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid("slot_duration", "must be positive and finite, or auto"));
            }
        }
        for (field, range) in [
            ("lender_lambda_range", self.lender_lambda_range),
            ("sender_lambda_range", self.sender_lambda_range),
        ] {
            let (lo, hi) = range;
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(field, format!("need 0 < lo <= hi, got {lo} {hi}")));
            }
        }
        if !(self.lender_fraction >= 0.0 && self.lender_fraction <= 1.0) {
            return Err(invalid("lender_fraction", "must lie in [0, 1]"));
        }
        if self.m_size == 0 {
            return Err(invalid("m_size", "buffer must hold at least one packet"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be positive and finite"));
        }
        if self.replications == 0 {
            return Err(invalid("replications", "need at least one replication"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "area_side = {}", self.area_side);
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        match self.slot_duration {
            Some(d) => {
                let _ = writeln!(s, "slot_duration = {d}");
            }
            None => {
                let _ = writeln!(s, "slot_duration = auto");
            }
        }
        let _ = writeln!(
            s,
            "lender_lambda_range = {} {}",
            self.lender_lambda_range.0, self.lender_lambda_range.1
        );
        let _ = writeln!(
            s,
            "sender_lambda_range = {} {}",
            self.sender_lambda_range.0, self.sender_lambda_range.1
        );
        let _ = writeln!(s, "lender_fraction = {}", self.lender_fraction);
        let _ = writeln!(s, "m_size = {}", self.m_size);
        let _ = writeln!(s, "f_reserved = {}", self.f_reserved);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "lending_enabled = {}", self.lending_enabled);
        let _ = writeln!(
            s,
            "cancel_sleep_on_no_interest = {}",
            self.cancel_sleep_on_no_interest
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "replications = {}", self.replications);
        s
    }

    /// Parses a config file body. Omitted keys keep their defaults; unknown
    /// or repeated keys are errors, as are malformed values.
    pub fn from_text(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("expected `key = value`, got `{body}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key.to_string());
            let parse_err = |message: String| ConfigError::Parse { line, message };
            macro_rules! num {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| {
                        parse_err(format!("bad value `{value}` for `{key}`: {e}"))
                    })?
                };
            }
            match key {
                "n" => cfg.n = num!(usize),
                "area_side" => cfg.area_side = num!(f64),
                "radius" => cfg.radius = num!(f64),
                "rounds" => cfg.rounds = num!(u64),
                "slot_duration" => {
                    cfg.slot_duration = if value == "auto" {
                        None
                    } else {
                        Some(num!(f64))
                    }
                }
                "lender_lambda_range" => cfg.lender_lambda_range = parse_range(key, value, line)?,
                "sender_lambda_range" => cfg.sender_lambda_range = parse_range(key, value, line)?,
                "lender_fraction" => cfg.lender_fraction = num!(f64),
                "m_size" => cfg.m_size = num!(usize),
                "f_reserved" => cfg.f_reserved = num!(usize),
                "alpha" => cfg.alpha = num!(f64),
                "lending_enabled" => cfg.lending_enabled = parse_bool(key, value, line)?,
                "cancel_sleep_on_no_interest" => {
                    cfg.cancel_sleep_on_no_interest = parse_bool(key, value, line)?
                }
                "seed" => cfg.seed = num!(u64),
                "replications" => cfg.replications = num!(u32),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::from_text(&std::fs::read_to_string(path)?)
    }

    /// The first field (if any) on which two configs differ in a way that
    /// makes their runs incomparable. `alpha` and `lending_enabled` are the
    /// experiment knobs and deliberately exempt.
    pub fn mismatch(&self, other: &ScenarioConfig) -> Option<&'static str> {
        if self.n != other.n {
            return Some("n");
        }
        if self.area_side != other.area_side {
            return Some("area_side");
        }
        if self.radius != other.radius {
            return Some("radius");
        }
        if self.rounds != other.rounds {
            return Some("rounds");
        }
        if self.slot_duration != other.slot_duration {
            return Some("slot_duration");
        }
        if self.lender_lambda_range != other.lender_lambda_range {
            return Some("lender_lambda_range");
        }
        if self.sender_lambda_range != other.sender_lambda_range {
            return Some("sender_lambda_range");
        }
        if self.lender_fraction != other.lender_fraction {
            return Some("lender_fraction");
        }
        if self.m_size != other.m_size {
            return Some("m_size");
        }
        if self.f_reserved != other.f_reserved {
            return Some("f_reserved");
        }
        if self.cancel_sleep_on_no_interest != other.cancel_sleep_on_no_interest {
            return Some("cancel_sleep_on_no_interest");
        }
        if self.seed != other.seed {
            return Some("seed");
        }
        if self.replications != other.replications {
            return Some("replications");
        }
        None
    }
}

fn parse_range(key: &str, value: &str, line: usize) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let bad = |message: String| ConfigError::Parse { line, message };
    if parts.len() != 2 {
        return Err(bad(format!(
            "`{key}` wants two numbers `lo hi`, got `{value}`"
        )));
    }
    let lo = parts[0]
        .parse::<f64>()
        .map_err(|e| bad(format!("bad value `{}` for `{key}`: {e}", parts[0])))?;
    let hi = parts[1]
        .parse::<f64>()
        .map_err(|e| bad(format!("bad value `{}` for `{key}`: {e}", parts[1])))?;
    Ok((lo, hi))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::Parse {
            line,
            message: format!("`{key}` wants true or false, got `{value}`"),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Lender,
    Sender,
}

impl std::fmt::Display for NodeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NodeClass::Lender => "lender",
            NodeClass::Sender => "sender",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub id: NodeId,
    pub class: NodeClass,
    pub lambda_per_min: f64,
    pub sensed: u64,
    pub flushed: u64,
    pub dropped: u64,
    pub residual: u64,
    pub total_wait_slots: f64,
    pub mean_wait_ms: Option<f64>,
    pub sleep_slots: u64,
    pub borrowed_slot_transmissions: u64,
    pub leases_granted: u64,
    pub protocol_errors: u64,
}

impl NodeReport {
    /// Loss rate, absent when the node sensed nothing.
    pub fn loss(&self) -> Option<f64> {
        if self.sensed == 0 {
            None
        } else {
            Some(self.dropped as f64 / self.sensed as f64)
        }
    }
}

/// Pooled metrics over a set of nodes. Loss pools drops over senses; wait
/// pools waiting time over flushed packets; sleep averages per-node
/// fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAggregate {
    pub count: usize,
    pub sensed: u64,
    pub dropped: u64,
    pub flushed: u64,
    pub loss: Option<f64>,
    pub mean_wait_ms: Option<f64>,
    pub sleep_fraction_mean: Option<f64>,
    pub sleep_fraction_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub config: ScenarioConfig,
    pub chi: u32,
    pub max_degree: usize,
    pub slot_ms: f64,
    pub total_slots: u64,
    pub collisions: u64,
    pub protocol_errors: u64,
    pub leases_granted_total: u64,
    pub nodes: Vec<NodeReport>,
}

impl SimReport {
    pub fn lender_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.class == NodeClass::Lender)
            .map(|n| n.id)
            .collect()
    }

    /// Borrowers are the nodes that held at least one lease in this run.
    pub fn borrower_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.leases_granted > 0)
            .map(|n| n.id)
            .collect()
    }

    pub fn aggregate(&self, ids: &[NodeId]) -> ClassAggregate {
        let mut sensed = 0u64;
        let mut dropped = 0u64;
        let mut flushed = 0u64;
        let mut wait_slots = 0.0f64;
        let mut sleep_fracs: Vec<f64> = Vec::new();
        for &id in ids {
            let n = &self.nodes[id.idx()];
            sensed += n.sensed;
            dropped += n.dropped;
            flushed += n.flushed;
            wait_slots += n.total_wait_slots;
            if self.total_slots > 0 {
                sleep_fracs.push(n.sleep_slots as f64 / self.total_slots as f64);
            }
        }
        ClassAggregate {
            count: ids.len(),
            sensed,
            dropped,
            flushed,
            loss: (sensed > 0).then(|| dropped as f64 / sensed as f64),
            mean_wait_ms: (flushed > 0).then(|| wait_slots / flushed as f64 * self.slot_ms),
            sleep_fraction_mean: (!sleep_fracs.is_empty())
                .then(|| sleep_fracs.iter().sum::<f64>() / sleep_fracs.len() as f64),
            sleep_fraction_max: sleep_fracs.iter().copied().reduce(f64::max),
        }
    }

    pub fn all_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("slotlend report v1\n# config\n");
        s.push_str(&self.config.to_text());
        s.push_str("# derived\n");
        let _ = writeln!(s, "chi = {}", self.chi);
        let _ = writeln!(s, "max_degree = {}", self.max_degree);
        let _ = writeln!(s, "slot_ms = {}", self.slot_ms);
        let _ = writeln!(s, "total_slots = {}", self.total_slots);
        let _ = writeln!(s, "collisions = {}", self.collisions);
        let _ = writeln!(s, "protocol_errors = {}", self.protocol_errors);
        let _ = writeln!(s, "leases_granted = {}", self.leases_granted_total);
        s.push_str("# nodes\n");
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "node {} class={} lambda_min={} sensed={} flushed={} dropped={} residual={} wait_ms={} sleep={} borrowed_tx={} leases={} errors={}",
                n.id,
                n.class,
                n.lambda_per_min,
                n.sensed,
                n.flushed,
                n.dropped,
                n.residual,
                fmt_opt(n.mean_wait_ms),
                n.sleep_slots,
                n.borrowed_slot_transmissions,
                n.leases_granted,
                n.protocol_errors,
            );
        }
        s.push_str("# classes\n");
        for (name, ids) in [
            ("all", self.all_ids()),
            ("lenders", self.lender_ids()),
            ("borrowers", self.borrower_ids()),
        ] {
            let a = self.aggregate(&ids);
            let _ = writeln!(
                s,
                "class {name} count={} loss={} wait_ms={} sleep_mean={} sleep_max={}",
                a.count,
                fmt_opt(a.loss),
                fmt_opt(a.mean_wait_ms),
                fmt_opt(a.sleep_fraction_mean),
                fmt_opt(a.sleep_fraction_max),
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "na".to_string(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("runs are not comparable: configs differ in `{field}`")]
    ConfigMismatch { field: &'static str },
    #[error("paired runs disagree on sensed packets at node {node}; arrival streams were not shared")]
    TrafficMismatch { node: NodeId },
}

/// Relative borrower-class deltas of a lending run against its paired
/// baseline, plus the lending run's lender sleep statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub borrower_count: usize,
    pub baseline_loss: Option<f64>,
    pub lending_loss: Option<f64>,
    /// (baseline − lending) / baseline × 100; 0 when the baseline had no
    /// measurable loss (nothing to improve).
    pub loss_reduction_pct: f64,
    pub baseline_wait_ms: Option<f64>,
    pub lending_wait_ms: Option<f64>,
    pub wait_reduction_pct: f64,
    pub lender_sleep_mean: Option<f64>,
    pub lender_sleep_max: Option<f64>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "borrowers = {}", self.borrower_count);
        let _ = writeln!(s, "borrower_loss_baseline = {}", fmt_opt(self.baseline_loss));
        let _ = writeln!(s, "borrower_loss_lending = {}", fmt_opt(self.lending_loss));
        let _ = writeln!(s, "borrower_loss_reduction_pct = {}", self.loss_reduction_pct);
        let _ = writeln!(s, "borrower_wait_ms_baseline = {}", fmt_opt(self.baseline_wait_ms));
        let _ = writeln!(s, "borrower_wait_ms_lending = {}", fmt_opt(self.lending_wait_ms));
        let _ = writeln!(s, "borrower_wait_reduction_pct = {}", self.wait_reduction_pct);
        let _ = writeln!(s, "lender_sleep_fraction_mean = {}", fmt_opt(self.lender_sleep_mean));
        let _ = writeln!(s, "lender_sleep_fraction_max = {}", fmt_opt(self.lender_sleep_max));
        s
    }
}

fn reduction_pct(base: Option<f64>, lend: Option<f64>) -> f64 {
    match (base, lend) {
        (Some(b), Some(l)) if b > 0.0 => (b - l) / b * 100.0,
        _ => 0.0,
    }
}

/// Paired comparison. The borrower class is read off the lending run; its
/// members' baseline metrics come from the same node ids in the baseline
/// run.
pub fn compare(baseline: &SimReport, lending: &SimReport) -> Result<Comparison, CompareError> {
    if let Some(field) = baseline.config.mismatch(&lending.config) {
        return Err(CompareError::ConfigMismatch { field });
    }
    for (a, b) in baseline.nodes.iter().zip(&lending.nodes) {
        if a.sensed != b.sensed {
            return Err(CompareError::TrafficMismatch { node: a.id });
        }
    }
    let borrowers = lending.borrower_ids();
    let base = baseline.aggregate(&borrowers);
    let lend = lending.aggregate(&borrowers);
    let lenders = lending.lender_ids();
    let sleep = lending.aggregate(&lenders);
    Ok(Comparison {
        borrower_count: borrowers.len(),
        baseline_loss: base.loss,
        lending_loss: lend.loss,
        loss_reduction_pct: reduction_pct(base.loss, lend.loss),
        baseline_wait_ms: base.mean_wait_ms,
        lending_wait_ms: lend.mean_wait_ms,
        wait_reduction_pct: reduction_pct(base.mean_wait_ms, lend.mean_wait_ms),
        lender_sleep_mean: sleep.sleep_fraction_mean,
        lender_sleep_max: sleep.sleep_fraction_max,
    })
}

/// Derives the config of one replication: an independent seed, the α under
/// test, and the mode flag. Everything else is inherited.
pub fn replication_config(
    base: &ScenarioConfig,
    alpha: f64,
    lending_enabled: bool,
    replication: u32,
) -> ScenarioConfig {
    ScenarioConfig {
        seed: subseed(base.seed, stream_label::REPLICATION, replication as u64),
        alpha,
        lending_enabled,
        ..base.clone()
    }
}

/// One paired experiment: a lending run and its arrival-identical baseline.
#[derive(Debug, Clone)]
pub struct SweepPair {
    pub alpha: f64,
    pub replication: u32,
    pub baseline: SimReport,
    pub lending: SimReport,
    pub comparison: Comparison,
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<MeanSe> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        };
        Some(MeanSe {
            mean,
            se,
            count: values.len(),
        })
    }
}

/// Replication-aggregated results for one α.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub alpha: f64,
    pub replications: u32,
    pub baseline_loss: Option<MeanSe>,
    pub lending_loss: Option<MeanSe>,
    pub loss_reduction_pct: MeanSe,
    pub baseline_wait_ms: Option<MeanSe>,
    pub lending_wait_ms: Option<MeanSe>,
    pub wait_reduction_pct: MeanSe,
    pub sleep_fraction: Option<MeanSe>,
    pub sleep_fraction_max: Option<f64>,
    pub borrower_count_mean: f64,
    pub collisions: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub seed: u64,
    pub replications: u32,
    pub alphas: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub collisions_total: u64,
}

/// Runs every (α, replication) pair against a shared per-replication
/// baseline. Pairs come back ordered by replication then α.
pub fn sweep_runs(
    base: &ScenarioConfig,
    alphas: &[f64],
    replications: u32,
) -> Result<Vec<SweepPair>, SimError> {
    let mut pairs = Vec::new();
    for rep in 0..replications {
        let baseline_cfg = replication_config(base, base.alpha, false, rep);
        let baseline = engine::run(&baseline_cfg)?;
        for &alpha in alphas {
            let lending_cfg = replication_config(base, alpha, true, rep);
            let lending = engine::run(&lending_cfg)?;
            let comparison = compare(&baseline, &lending)?;
            pairs.push(SweepPair {
                alpha,
                replication: rep,
                baseline: baseline.clone(),
                lending,
                comparison,
            });
        }
    }
    Ok(pairs)
}

/// Collapses pairs into per-α means with standard errors.
pub fn aggregate_sweep(pairs: &[SweepPair], alphas: &[f64], seed: u64) -> SweepReport {
    let mut rows = Vec::new();
    let mut collisions_total = 0u64;
    let mut counted_reps: Vec<u32> = Vec::new();
    for p in pairs {
        collisions_total += p.lending.collisions;
        if !counted_reps.contains(&p.replication) {
            counted_reps.push(p.replication);
            collisions_total += p.baseline.collisions;
        }
    }
    for &alpha in alphas {
        let of_alpha: Vec<&SweepPair> = pairs
            .iter()
            .filter(|p| p.alpha.to_bits() == alpha.to_bits())
            .collect();
        let collect = |f: &dyn Fn(&Comparison) -> Option<f64>| -> Vec<f64> {
            of_alpha.iter().filter_map(|p| f(&p.comparison)).collect()
        };
        let reductions_loss: Vec<f64> = of_alpha
            .iter()
            .map(|p| p.comparison.loss_reduction_pct)
            .collect();
        let reductions_wait: Vec<f64> = of_alpha
            .iter()
            .map(|p| p.comparison.wait_reduction_pct)
            .collect();
        let sleep_max = of_alpha
            .iter()
            .filter_map(|p| p.comparison.lender_sleep_max)
            .reduce(f64::max);
        rows.push(SweepRow {
            alpha,
            replications: of_alpha.len() as u32,
            baseline_loss: MeanSe::of(&collect(&|c| c.baseline_loss)),
            lending_loss: MeanSe::of(&collect(&|c| c.lending_loss)),
            loss_reduction_pct: MeanSe::of(&reductions_loss).unwrap_or(MeanSe {
                mean: 0.0,
                se: 0.0,
                count: 0,
            }),
            baseline_wait_ms: MeanSe::of(&collect(&|c| c.baseline_wait_ms)),
            lending_wait_ms: MeanSe::of(&collect(&|c| c.lending_wait_ms)),
            wait_reduction_pct: MeanSe::of(&reductions_wait).unwrap_or(MeanSe {
                mean: 0.0,
                se: 0.0,
                count: 0,
            }),
            sleep_fraction: MeanSe::of(&collect(&|c| c.lender_sleep_mean)),
            sleep_fraction_max: sleep_max,
            borrower_count_mean: if of_alpha.is_empty() {
                0.0
            } else {
                of_alpha
                    .iter()
                    .map(|p| p.comparison.borrower_count as f64)
                    .sum::<f64>()
                    / of_alpha.len() as f64
            },
            collisions: of_alpha.iter().map(|p| p.lending.collisions).sum(),
        });
    }
    SweepReport {
        seed,
        replications: counted_reps.len() as u32,
        alphas: alphas.to_vec(),
        rows,
        collisions_total,
    }
}

/// The full experiment: paired runs for each α and replication, aggregated.
pub fn sweep(
    base: &ScenarioConfig,
    alphas: &[f64],
    replications: u32,
) -> Result<SweepReport, SimError> {
    let pairs = sweep_runs(base, alphas, replications)?;
    Ok(aggregate_sweep(&pairs, alphas, base.seed))
}

fn fmt_mean_se(v: &Option<MeanSe>) -> (String, String) {
    match v {
        Some(m) => (m.mean.to_string(), m.se.to_string()),
        None => ("na".to_string(), "na".to_string()),
    }
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("slotlend sweep v1\n");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "replications = {}", self.replications);
        let alphas: Vec<String> = self.alphas.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(s, "alphas = {}", alphas.join(" "));
        for r in &self.rows {
            let (bl, bl_se) = fmt_mean_se(&r.baseline_loss);
            let (ll, ll_se) = fmt_mean_se(&r.lending_loss);
            let (bw, bw_se) = fmt_mean_se(&r.baseline_wait_ms);
            let (lw, lw_se) = fmt_mean_se(&r.lending_wait_ms);
            let (sf, sf_se) = fmt_mean_se(&r.sleep_fraction);
            let _ = writeln!(
                s,
                "row alpha={} reps={} base_loss={} base_loss_se={} lend_loss={} lend_loss_se={} loss_red_pct={} loss_red_se={} base_wait_ms={} base_wait_se={} lend_wait_ms={} lend_wait_se={} wait_red_pct={} wait_red_se={} sleep_frac={} sleep_frac_se={} sleep_frac_max={} borrowers={} collisions={}",
                r.alpha,
                r.replications,
                bl,
                bl_se,
                ll,
                ll_se,
                r.loss_reduction_pct.mean,
                r.loss_reduction_pct.se,
                bw,
                bw_se,
                lw,
                lw_se,
                r.wait_reduction_pct.mean,
                r.wait_reduction_pct.se,
                sf,
                sf_se,
                fmt_opt(r.sleep_fraction_max),
                r.borrower_count_mean,
                r.collisions,
            );
        }
        let _ = writeln!(s, "collisions_total = {}", self.collisions_total);
        s
    }

    /// Writes the three per-figure tables into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut loss = String::from(
            "alpha,baseline_loss,baseline_loss_se,lending_loss,lending_loss_se,reduction_pct,reduction_pct_se\n",
        );
        let mut wait = String::from(
            "alpha,baseline_wait_ms,baseline_wait_ms_se,lending_wait_ms,lending_wait_ms_se,reduction_pct,reduction_pct_se\n",
        );
        let mut sleep =
            String::from("alpha,sleep_fraction_mean,sleep_fraction_se,sleep_fraction_max\n");
        for r in &self.rows {
            let (bl, bl_se) = fmt_mean_se(&r.baseline_loss);
            let (ll, ll_se) = fmt_mean_se(&r.lending_loss);
            let _ = writeln!(
                loss,
                "{},{},{},{},{},{},{}",
                r.alpha, bl, bl_se, ll, ll_se, r.loss_reduction_pct.mean, r.loss_reduction_pct.se
            );
            let (bw, bw_se) = fmt_mean_se(&r.baseline_wait_ms);
            let (lw, lw_se) = fmt_mean_se(&r.lending_wait_ms);
            let _ = writeln!(
                wait,
                "{},{},{},{},{},{},{}",
                r.alpha, bw, bw_se, lw, lw_se, r.wait_reduction_pct.mean, r.wait_reduction_pct.se
            );
            let (sf, sf_se) = fmt_mean_se(&r.sleep_fraction);
            let _ = writeln!(
                sleep,
                "{},{},{},{}",
                r.alpha,
                sf,
                sf_se,
                fmt_opt(r.sleep_fraction_max)
            );
        }
        std::fs::write(dir.join("fig1_loss.csv"), loss)?;
        std::fs::write(dir.join("fig3_wait.csv"), wait)?;
        std::fs::write(dir.join("fig4_sleep.csv"), sleep)?;
        Ok(())
    }
}
