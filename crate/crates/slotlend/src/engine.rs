//! Synchronous round engine: one `step` advances the global clock by one
//! slot, in five fixed phases.
//!
//! 1. Packet arrivals for the slot window are drawn and buffered.
//! 2. Every node whose turn it is (own or borrowed color, awake) flushes its
//!    data buffer and broadcasts queued control messages; a lender whose
//!    buffer came up empty at its own slot may append a lend offer and put
//!    itself to sleep.
//! 3. The transmission set is audited for collisions — two transmitters
//!    within two hops of each other are a violation; their payloads are
//!    dropped.
//! 4. Every 1-hop neighbor of each surviving transmitter handles the control
//!    messages (handlers run in ascending node id; sends are deferred to the
//!    receiver's next slot, so order cannot leak into behavior). Sleeping
//!    receivers still process control traffic — their radio duty-cycles the
//!    data plane only — but transmit nothing until they wake.
//! 5. The clock increments.
//!
//! Everything is deterministic given the scenario seed: node iteration is by
//! ascending id, RNG use is confined to labeled sub-streams, and no hash
//! map is iterated anywhere.
//!
//! The engine keeps two global structures the nodes themselves never read:
//! the granted-lease view handed to `decide_lend` (the idealized knowledge
//! the eligibility rule is specified against) and an optional audit history
//! of all leases ever granted, used by tests; disabling the latter cannot
//! change a run.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::coloring::{greedy_distance2, verify_distance2, Color, ColorAssignment};
use crate::harness::{CompareError, ConfigError, NodeClass, NodeReport, ScenarioConfig, SimReport};
use crate::protocol::{Lease, ProtocolMessage, ProtocolState, Slot};
use crate::topology::{NodeId, Topology};
use crate::trace::{TraceEvent, TraceRecord, TraceSink, WakeReason};
use crate::traffic::{
    stream_label, substream, ArrivalStream, Buffer, Packet, TrafficError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("trace output failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal invariant broken: {0}")]
    Internal(String),
}

/// One collision-audit hit: `a` and `b` transmitted in the same slot at
/// hop distance 1, or at hop distance 2 (sharing a receiver).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionViolation {
    pub a: NodeId,
    pub b: NodeId,
    pub hop: u32,
}

/// Scans the slot's transmitter set for pairs close enough to interfere.
/// Pairs are reported in input order (first index outer).
pub fn detect_collisions(transmitters: &[NodeId], t: &Topology) -> Vec<CollisionViolation> {
    let mut violations = Vec::new();
    for (i, &a) in transmitters.iter().enumerate() {
        for &b in &transmitters[i + 1..] {
            if a == b {
                continue;
            }
            let hop = if t.adjacent(a).binary_search(&b).is_ok() {
                1
            } else if t.within_two_hops(a, b) {
                2
            } else {
                continue;
            };
            violations.push(CollisionViolation { a, b, hop });
        }
    }
    violations
}

/// A lease grant as the audit history records it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaseRecord {
    pub lease: Lease,
    pub granted_at: Slot,
}

struct Transmission {
    sender: NodeId,
    data: usize,
    control: Vec<ProtocolMessage>,
}

pub struct World {
    cfg: ScenarioConfig,
    topo: Topology,
    assignment: ColorAssignment,
    chi: u32,
    slot_ms: f64,
    lambda_min: Vec<f64>,
    lambda_slot: Vec<f64>,
    is_lender: Vec<bool>,
    protos: Vec<ProtocolState>,
    buffers: Vec<Buffer>,
    arrivals: Vec<ArrivalStream>,
    sleep_slots: Vec<u64>,
    borrowed_tx: Vec<u64>,
    /// Payload packets lost to audited collisions; reclassified from
    /// flushed to dropped in the report so collision damage is visible.
    collision_lost: Vec<u64>,
    was_sleeping: Vec<bool>,
    /// Granted, unexpired leases — the view `decide_lend` consults.
    view: Vec<Lease>,
    audit: bool,
    lease_history: Vec<LeaseRecord>,
    clock: Slot,
    collisions: u64,
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Result<World, SimError> {
        World::with_audit(cfg, true)
    }

    /// `audit = false` skips the lease history; by construction no node ever
    /// reads it, and a test pins that equivalence.
    pub fn with_audit(cfg: &ScenarioConfig, audit: bool) -> Result<World, SimError> {
        cfg.validate()?;
        let topo = Topology::generate_geometric(
            cfg.n,
            cfg.area_side,
            cfg.radius,
            crate::traffic::subseed(cfg.seed, stream_label::PLACEMENT, 0),
        );
        let assignment = greedy_distance2(&topo);
        let violations = verify_distance2(&topo, &assignment)
            .map_err(|e| SimError::Internal(format!("coloring self-check failed: {e}")))?;
        if !violations.is_empty() {
            return Err(SimError::Internal(format!(
                "greedy coloring produced {} distance-2 violations",
                violations.len()
            )));
        }
        let chi = assignment.chi();
        let slot_ms = cfg.slot_duration.unwrap_or(1.0 / chi as f64);

        let mut class_rng = substream(cfg.seed, stream_label::CLASSES, 0);
        let is_lender: Vec<bool> = (0..cfg.n)
            .map(|_| class_rng.gen::<f64>() < cfg.lender_fraction)
            .collect();

        let mut rate_rng = substream(cfg.seed, stream_label::RATES, 0);
        let lambda_min: Vec<f64> = (0..cfg.n)
            .map(|i| {
                let (lo, hi) = if is_lender[i] {
                    cfg.lender_lambda_range
                } else {
                    cfg.sender_lambda_range
                };
                crate::traffic::draw_rate(lo, hi, &mut rate_rng)
            })
            .collect();
        let lambda_slot: Vec<f64> = lambda_min.iter().map(|l| l / 60_000.0 * slot_ms).collect();

        let mut protos = Vec::with_capacity(cfg.n);
        let mut buffers = Vec::with_capacity(cfg.n);
        let mut arrivals = Vec::with_capacity(cfg.n);
        for i in 0..cfg.n {
            let id = NodeId(i as u32);
            protos.push(ProtocolState::new(
                id,
                assignment.color(id),
                chi,
                lambda_slot[i],
                topo.degree(id),
                is_lender[i],
                false,
            ));
            buffers.push(Buffer::new(cfg.m_size + cfg.f_reserved, cfg.f_reserved)?);
            arrivals.push(ArrivalStream::new(lambda_slot[i], cfg.seed, id)?);
        }

        Ok(World {
            cfg: cfg.clone(),
            topo,
            assignment,
            chi,
            slot_ms,
            lambda_min,
            lambda_slot,
            is_lender,
            protos,
            buffers,
            arrivals,
            sleep_slots: vec![0; cfg.n],
            borrowed_tx: vec![0; cfg.n],
            collision_lost: vec![0; cfg.n],
            was_sleeping: vec![false; cfg.n],
            view: Vec::new(),
            audit,
            lease_history: Vec::new(),
            clock: 0,
            collisions: 0,
        })
    }

    pub fn clock(&self) -> Slot {
        self.clock
    }

    pub fn chi(&self) -> u32 {
        self.chi
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn assignment(&self) -> &ColorAssignment {
        &self.assignment
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    /// All leases ever granted (audit history; empty when auditing is off).
    pub fn lease_history(&self) -> &[LeaseRecord] {
        &self.lease_history
    }

    /// Currently live leases.
    pub fn active_leases(&self) -> &[Lease] {
        &self.view
    }

    fn slot_color(&self, now: Slot) -> Color {
        Color((now % self.chi as u64) as u32)
    }

    fn emit(sink: &mut TraceSink, slot: Slot, node: NodeId, event: TraceEvent) -> Result<(), SimError> {
        sink.emit(TraceRecord { slot, node, event })?;
        Ok(())
    }

    fn event_for(msg: &ProtocolMessage) -> TraceEvent {
        match msg {
            ProtocolMessage::LendColor {
                color,
                expiry,
                eligible,
                ..
            } => TraceEvent::Lend {
                color: *color,
                until: *expiry,
                to: eligible.clone(),
            },
            ProtocolMessage::InterestInColor {
                color,
                expiry,
                lambda,
                ..
            } => TraceEvent::Interest {
                color: *color,
                until: *expiry,
                lambda: *lambda,
            },
            ProtocolMessage::FirstConfirm { entries, .. } => TraceEvent::FirstConfirm {
                entries: entries.clone(),
            },
            ProtocolMessage::LastConfirm { colors, hop, .. } => TraceEvent::LastConfirm {
                hop: *hop,
                colors: colors.clone(),
            },
        }
    }

    fn register_grant(
        &mut self,
        lease: Lease,
        now: Slot,
        sink: &mut TraceSink,
    ) -> Result<(), SimError> {
        if sink.enabled() {
            Self::emit(
                sink,
                now,
                lease.borrower,
                TraceEvent::Borrow {
                    color: lease.color,
                    until: lease.expiry,
                    lender: lease.lender,
                    cnt: self.topo.degree(lease.borrower),
                },
            )?;
        }
        self.view.push(lease);
        if self.audit {
            self.lease_history.push(LeaseRecord {
                lease,
                granted_at: now,
            });
        }
        Ok(())
    }

    /// Advances the world by exactly one slot.
    pub fn step(&mut self, sink: &mut TraceSink) -> Result<(), SimError> {
        let now = self.clock;
        let n = self.cfg.n;
        let tracing = sink.enabled();

        // Leases whose window closed stop existing before anything else
        // happens this slot.
        let mut kept = Vec::with_capacity(self.view.len());
        for lease in std::mem::take(&mut self.view) {
            if lease.expiry.is_live(now) {
                kept.push(lease);
            } else if tracing {
                Self::emit(
                    sink,
                    now,
                    lease.borrower,
                    TraceEvent::Expire {
                        color: lease.color,
                        lender: lease.lender,
                    },
                )?;
            }
        }
        self.view = kept;
        for i in 0..n {
            if self.was_sleeping[i] && !self.protos[i].sleeping(now) {
                self.was_sleeping[i] = false;
                if tracing {
                    Self::emit(
                        sink,
                        now,
                        NodeId(i as u32),
                        TraceEvent::Wake {
                            reason: WakeReason::Expiry,
                        },
                    )?;
                }
            }
        }

        // Phase 1: arrivals in [now, now+1).
        let window_end = (now + 1) as f64;
        for i in 0..n {
            while let Some(arrival) = self.arrivals[i].next_before(window_end) {
                self.buffers[i].enqueue(Packet {
                    origin: NodeId(i as u32),
                    arrival,
                });
            }
        }

        // Phase 2: transmissions.
        let slot_color = self.slot_color(now);
        let mut txs: Vec<Transmission> = Vec::new();
        for i in 0..n {
            let id = NodeId(i as u32);
            let own_slot = self.protos[i].color() == slot_color;
            if self.cfg.cancel_sleep_on_no_interest
                && self.cfg.lending_enabled
                && own_slot
                && self.protos[i].sleeping(now)
                && self.protos[i].cancel_sleep_if_ignored(now)
            {
                self.was_sleeping[i] = false;
                if tracing {
                    Self::emit(
                        sink,
                        now,
                        id,
                        TraceEvent::Wake {
                            reason: WakeReason::NoInterest,
                        },
                    )?;
                }
            }
            if self.protos[i].sleeping(now) {
                self.sleep_slots[i] += 1;
                continue;
            }
            if !self.protos[i].may_transmit(now) {
                continue;
            }
            let data = self.buffers[i].flush(window_end);
            let mut control = self.protos[i].drain_outbox(now);
            let mut slept = None;
            if own_slot && self.cfg.lending_enabled && self.is_lender[i] && data.is_empty() {
                match self.protos[i].decide_lend(
                    now,
                    &self.topo,
                    &self.assignment,
                    &self.view,
                    &self.lambda_slot,
                    self.cfg.alpha,
                ) {
                    Ok(Some(msg)) => {
                        if let ProtocolMessage::LendColor { expiry, .. } = &msg {
                            slept = Some(*expiry);
                        }
                        control.push(msg);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        return Err(SimError::Internal(format!(
                            "lend decision rejected its own preconditions: {e}"
                        )))
                    }
                }
            }
            if data.is_empty() && control.is_empty() {
                // Nothing to say: the radio stays quiet this slot.
                continue;
            }
            if !own_slot {
                self.borrowed_tx[i] += 1;
            }
            if tracing {
                Self::emit(
                    sink,
                    now,
                    id,
                    TraceEvent::Tx {
                        slot_color,
                        owned: own_slot,
                        data: data.len(),
                        control: control.len(),
                    },
                )?;
                for msg in &control {
                    Self::emit(sink, now, id, Self::event_for(msg))?;
                }
            }
            if let Some(until) = slept {
                self.was_sleeping[i] = true;
                if tracing {
                    Self::emit(sink, now, id, TraceEvent::Sleep { until })?;
                }
            }
            txs.push(Transmission {
                sender: id,
                data: data.len(),
                control,
            });
            drop(data); // packets leave the system at flush; nothing forwards them
        }

        // Phase 3: collision audit. Colliding transmissions are lost whole —
        // receivers get nothing, and the payload packets count as drops.
        let tx_ids: Vec<NodeId> = txs.iter().map(|t| t.sender).collect();
        let violations = detect_collisions(&tx_ids, &self.topo);
        self.collisions += violations.len() as u64;
        let mut colliding: BTreeSet<NodeId> = BTreeSet::new();
        for v in &violations {
            colliding.insert(v.a);
            colliding.insert(v.b);
            if tracing {
                Self::emit(
                    sink,
                    now,
                    v.a,
                    TraceEvent::Collision {
                        peer: v.b,
                        hop: v.hop,
                    },
                )?;
            }
        }
        for tx in &txs {
            if colliding.contains(&tx.sender) {
                self.collision_lost[tx.sender.idx()] += tx.data as u64;
            }
        }

        // Phase 4: delivery to 1-hop neighbors, handlers by ascending id.
        for tx in &txs {
            if tx.control.is_empty() || colliding.contains(&tx.sender) {
                continue;
            }
            let receivers: Vec<NodeId> = self.topo.adjacent(tx.sender).to_vec();
            for v in receivers {
                for msg in &tx.control {
                    let grant = match msg {
                        ProtocolMessage::LendColor { .. } => {
                            self.protos[v.idx()].on_lend_color(msg, now)
                        }
                        ProtocolMessage::InterestInColor { .. } => {
                            self.protos[v.idx()].on_interest_in_color(msg, now);
                            None
                        }
                        ProtocolMessage::FirstConfirm { .. } => {
                            self.protos[v.idx()].on_first_confirm(msg, now)
                        }
                        ProtocolMessage::LastConfirm { .. } => {
                            self.protos[v.idx()].on_last_confirm(msg, now);
                            None
                        }
                    };
                    if let Some(lease) = grant {
                        self.register_grant(lease, now, sink)?;
                    }
                }
            }
        }

        // Phase 5.
        self.clock += 1;
        Ok(())
    }

    /// Assembles the report for the run so far.
    pub fn report(&self) -> SimReport {
        let nodes: Vec<NodeReport> = (0..self.cfg.n)
            .map(|i| {
                let b = &self.buffers[i];
                NodeReport {
                    id: NodeId(i as u32),
                    class: if self.is_lender[i] {
                        NodeClass::Lender
                    } else {
                        NodeClass::Sender
                    },
                    lambda_per_min: self.lambda_min[i],
                    sensed: b.sensed(),
                    flushed: b.flushed() - self.collision_lost[i],
                    dropped: b.dropped() + self.collision_lost[i],
                    residual: b.residual(),
                    total_wait_slots: b.total_wait(),
                    mean_wait_ms: b.mean_wait().map(|w| w * self.slot_ms),
                    sleep_slots: self.sleep_slots[i],
                    borrowed_slot_transmissions: self.borrowed_tx[i],
                    leases_granted: self.protos[i].leases_granted(),
                    protocol_errors: self.protos[i].protocol_errors(),
                }
            })
            .collect();
        SimReport {
            config: self.cfg.clone(),
            chi: self.chi,
            max_degree: self.topo.max_degree(),
            slot_ms: self.slot_ms,
            total_slots: self.clock,
            collisions: self.collisions,
            protocol_errors: nodes.iter().map(|n| n.protocol_errors).sum(),
            leases_granted_total: nodes.iter().map(|n| n.leases_granted).sum(),
            nodes,
        }
    }

    #[cfg(test)]
    fn proto_mut(&mut self, i: usize) -> &mut ProtocolState {
        &mut self.protos[i]
    }

    #[cfg(test)]
    fn buffer_mut(&mut self, i: usize) -> &mut Buffer {
        &mut self.buffers[i]
    }
}

/// Runs a scenario start to finish without tracing.
pub fn run(cfg: &ScenarioConfig) -> Result<SimReport, SimError> {
    run_traced(cfg, &mut TraceSink::Null)
}

/// Runs a scenario start to finish, emitting the event trace into `sink`.
pub fn run_traced(cfg: &ScenarioConfig, sink: &mut TraceSink) -> Result<SimReport, SimError> {
    let mut world = World::new(cfg)?;
    while world.clock() < cfg.rounds {
        world.step(sink)?;
    }
    sink.finish()?;
    Ok(world.report())
}
