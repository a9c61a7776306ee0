//! The slot-lending protocol: per-node state machine, handshake messages,
//! and the probabilistic lease-duration policy.
//!
//! A lender with nothing to send offers its slot to the single best eligible
//! neighbor (`LendColor`), then powers down its data plane until the lease
//! expires. The candidate answers with `InterestInColor`; every node hearing
//! that interest arbitrates (`FirstConfirm`) and the candidate may use the
//! slot only once all of its 1-hop neighbors have endorsed it — the offer
//! itself counts as the lender's endorsement, since the lender is asleep for
//! the rest of the handshake. A granted borrow is announced (`LastConfirm`)
//! and relayed one hop further so the 2-hop neighborhood learns the color is
//! taken.
//!
//! Arbitration is the safety core: a node endorses at most one candidate per
//! color at a time and stays locked on it until the lease window ends.
//! Competing interests that arrive while an endorsement is pending may still
//! displace it (higher rate wins, ties to the larger id); once the
//! endorsement has been broadcast it is immutable. Combined with the
//! all-neighbors threshold this guarantees two borrows of the same color
//! with overlapping validity are always at least three hops apart.
//!
//! Sleep gates the data plane only. A sleeping node never transmits and
//! ignores sensed-packet broadcasts, but it still hears and processes
//! control messages, queueing its own responses until it is awake again —
//! otherwise every sleeping lender near a candidate would silently veto the
//! handshake and the protocol would starve itself.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::coloring::{Color, ColorAssignment};
use crate::topology::{NodeId, Topology};

/// Global slot index (the synchronized clock value).
pub type Slot = u64;

/// End of a lease window. `Never` models a lender that is leaving the
/// network for good and lends its slot permanently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expiry {
    At(Slot),
    Never,
}

impl Expiry {
    /// A window is live at `now` while `now < expiry`.
    pub fn is_live(self, now: Slot) -> bool {
        match self {
            Expiry::At(t) => now < t,
            Expiry::Never => true,
        }
    }
}

impl std::fmt::Display for Expiry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expiry::At(t) => write!(f, "{t}"),
            Expiry::Never => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("arrival rate must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("lease scale alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("lend decision at slot {now} is outside node {node}'s own slot (color {color}, frame {chi})")]
    NotOwnSlot {
        node: NodeId,
        now: Slot,
        color: Color,
        chi: u32,
    },
    #[error("node {0} is not configured as a lender")]
    NotALender(NodeId),
    #[error("node {0} is already sleeping")]
    AlreadySleeping(NodeId),
}

/// An active borrow: the right to transmit in slots of `color` until
/// `expiry`, granted by `lender`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lease {
    pub borrower: NodeId,
    pub color: Color,
    pub expiry: Expiry,
    pub lender: NodeId,
}

/// One arbitration entry: the best candidate seen for a color. The expiry is
/// the lease window it belongs to; the entry self-deletes when that window
/// ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEntry {
    pub color: Color,
    pub expiry: Expiry,
    pub lambda: f64,
    pub id: NodeId,
}

impl CandidateEntry {
    /// Competition order: higher rate wins, ties go to the larger id.
    fn beats(&self, other: &CandidateEntry) -> bool {
        match self.lambda.total_cmp(&other.lambda) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.id > other.id,
        }
    }
}

/// Control messages exchanged during the handshake. Each is broadcast to the
/// sender's 1-hop neighborhood, piggybacked on the sender's slot.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    /// Slot offer: `eligible` nodes may answer; the window closes at `expiry`.
    LendColor {
        lender: NodeId,
        color: Color,
        expiry: Expiry,
        eligible: Vec<NodeId>,
    },
    /// A candidate's bid for an offered color.
    InterestInColor {
        sender: NodeId,
        color: Color,
        expiry: Expiry,
        lambda: f64,
    },
    /// Arbitration verdicts: the best candidate per color this node has heard.
    FirstConfirm {
        sender: NodeId,
        entries: Vec<CandidateEntry>,
    },
    /// Borrow announcement (`hop == 1`, sent by the borrower) or its one-hop
    /// relay (`hop == 2`).
    LastConfirm {
        sender: NodeId,
        colors: Vec<(Color, Expiry)>,
        hop: u8,
    },
}

/// Lease length in slots: `ceil(alpha * ln(delta) / lambda)`.
///
/// `delta` is the network-wide maximum degree, `lambda` the lender's own
/// per-slot arrival rate; the quotient is the scale on which the lender
/// expects `alpha * ln(delta)` arrivals, so with `alpha = 1` the chance of
/// ending the lease with an untouched buffer is `delta^-1`. Returns 0 —
/// lending disabled — when `delta <= 1` (no contention to relieve).
pub fn lease_duration(alpha: f64, delta: usize, lambda: f64) -> Result<u64, ProtocolError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ProtocolError::BadLambda(lambda));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ProtocolError::BadAlpha(alpha));
    }
    if delta <= 1 {
        return Ok(0);
    }
    Ok((alpha * (delta as f64).ln() / lambda).ceil() as u64)
}

/// The nodes a lender may offer its color to, best candidate first.
///
/// A member must (i) have no other node within two hops — itself included —
/// whose permanent color or currently borrowed color equals `c`, and (ii) be
/// at hop distance >= 3 from every other member. Selection is greedy over
/// candidates in descending rate (ties: descending id), which makes the
/// result maximal and deterministic. Since any two neighbors of the lender
/// are within two hops of each other via the lender, (ii) caps the set at a
/// single member in practice; the general form is kept for clarity.
///
/// `active_borrows` must already be filtered to unexpired leases.
pub fn compute_eligible_set(
    t: &Topology,
    a: &ColorAssignment,
    lender: NodeId,
    c: Color,
    active_borrows: &[Lease],
    lambdas: &[f64],
) -> Vec<NodeId> {
    let clashes = |z: NodeId| z != lender && a.color(z) == c;
    let mut candidates: Vec<NodeId> = t
        .adjacent(lender)
        .iter()
        .copied()
        .filter(|&x| {
            // Condition (i): color c must be unseen within two hops of x,
            // except at the lender itself.
            let permanent_clash = clashes(x)
                || t.neighbors_exact(x, 1).iter().copied().any(clashes)
                || t.neighbors_exact(x, 2).iter().copied().any(clashes);
            if permanent_clash {
                return false;
            }
            !active_borrows
                .iter()
                .any(|l| l.borrower != lender && l.color == c && t.within_two_hops(l.borrower, x))
        })
        .collect();
    candidates.sort_by(|&x, &y| {
        lambdas[y.idx()]
            .total_cmp(&lambdas[x.idx()])
            .then(y.cmp(&x))
    });
    let mut chosen: Vec<NodeId> = Vec::new();
    for x in candidates {
        // hop(x, y) >= 3 (or disconnected) from everything already selected.
        if chosen.iter().all(|&y| !t.within_two_hops(x, y)) {
            chosen.push(x);
        }
    }
    chosen
}

/// My own bid for an offered color, plus who has endorsed it so far.
#[derive(Debug, Clone)]
struct Candidacy {
    expiry: Expiry,
    lender: NodeId,
    endorsers: BTreeSet<NodeId>,
}

/// The lender's view of its own outstanding offer (for the optional
/// sleep-cancel heuristic and for traces).
#[derive(Debug, Clone, Copy)]
pub struct OutstandingOffer {
    pub color: Color,
    pub expiry: Expiry,
    pub placed_at: Slot,
    pub interest_heard: bool,
}

/// Deferred control responses; materialized into messages at the next slot
/// this node actually transmits in.
#[derive(Debug, Clone)]
enum OutboxItem {
    Interest { color: Color, expiry: Expiry },
    AnnounceBorrows,
    Relay { colors: Vec<(Color, Expiry)> },
}

/// Everything one node knows and remembers for the protocol.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    my_id: NodeId,
    my_color: Color,
    chi: u32,
    lambda: f64,
    degree: usize,
    lender_class: bool,
    departing: bool,
    sleep_until: Option<Expiry>,
    /// Colors this node currently borrows.
    bcolors: Vec<Lease>,
    /// My own open bids, keyed by color.
    candidacies: BTreeMap<Color, Candidacy>,
    /// Arbitration: best candidate per color, not yet broadcast. Displaceable.
    pending_endorsements: BTreeMap<Color, CandidateEntry>,
    /// Arbitration: broadcast endorsements, locked until their window ends.
    endorsed: BTreeMap<Color, CandidateEntry>,
    /// Borrowed colors heard from 1-hop neighbors, with the latest expiry.
    d1colors: BTreeMap<Color, Expiry>,
    /// Same, relayed from two hops out.
    d2colors: BTreeMap<Color, Expiry>,
    outbox: Vec<OutboxItem>,
    offer: Option<OutstandingOffer>,
    leases_granted: u64,
    suppressed_interests: u64,
    protocol_errors: u64,
}

impl ProtocolState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        my_id: NodeId,
        my_color: Color,
        chi: u32,
        lambda: f64,
        degree: usize,
        lender_class: bool,
        departing: bool,
    ) -> ProtocolState {
        ProtocolState {
            my_id,
            my_color,
            chi,
            lambda,
            degree,
            lender_class,
            departing,
            sleep_until: None,
            bcolors: Vec::new(),
            candidacies: BTreeMap::new(),
            pending_endorsements: BTreeMap::new(),
            endorsed: BTreeMap::new(),
            d1colors: BTreeMap::new(),
            d2colors: BTreeMap::new(),
            outbox: Vec::new(),
            offer: None,
            leases_granted: 0,
            suppressed_interests: 0,
            protocol_errors: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.my_id
    }

    pub fn color(&self) -> Color {
        self.my_color
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_lender_class(&self) -> bool {
        self.lender_class
    }

    pub fn is_departing(&self) -> bool {
        self.departing
    }

    pub fn set_departing(&mut self, departing: bool) {
        self.departing = departing;
    }

    pub fn sleeping(&self, now: Slot) -> bool {
        self.sleep_until.map_or(false, |e| e.is_live(now))
    }

    pub fn sleep_until(&self) -> Option<Expiry> {
        self.sleep_until
    }

    /// Live borrows at `now`. Expired entries are pruned lazily.
    pub fn live_borrows(&self, now: Slot) -> impl Iterator<Item = &Lease> {
        self.bcolors.iter().filter(move |l| l.expiry.is_live(now))
    }

    /// Confirmation count for an open bid on `color` (the lender's implicit
    /// endorsement included). Zero when no bid is open.
    pub fn cnt(&self, color: Color) -> usize {
        self.candidacies
            .get(&color)
            .map_or(0, |c| c.endorsers.len())
    }

    pub fn d1colors(&self) -> &BTreeMap<Color, Expiry> {
        &self.d1colors
    }

    pub fn d2colors(&self) -> &BTreeMap<Color, Expiry>
    {
        &self.d2colors
    }

    pub fn endorsed_entry(&self, color: Color) -> Option<&CandidateEntry> {
        self.endorsed.get(&color)
    }

    pub fn outstanding_offer(&self) -> Option<&OutstandingOffer> {
        self.offer.as_ref()
    }

    pub fn leases_granted(&self) -> u64 {
        self.leases_granted
    }

    pub fn suppressed_interests(&self) -> u64 {
        self.suppressed_interests
    }

    pub fn protocol_errors(&self) -> u64 {
        self.protocol_errors
    }

    /// True iff this node may broadcast at `now`: awake, and the slot is its
    /// own or one it currently borrows.
    pub fn may_transmit(&self, now: Slot) -> bool {
        if self.sleeping(now) {
            return false;
        }
        let slot_color = Color((now % self.chi as u64) as u32);
        slot_color == self.my_color
            || self
                .bcolors
                .iter()
                .any(|l| l.color == slot_color && l.expiry.is_live(now))
    }

    /// Lender decision at its own slot: offer the color to the best eligible
    /// neighbor and power down until the lease expires. The engine calls
    /// this only when the node's transmit buffer is empty — an idle slot is
    /// the only thing worth lending.
    ///
    /// Returns `None` (and stays awake) when lending is disabled for this
    /// topology or nobody qualifies.
    pub fn decide_lend(
        &mut self,
        now: Slot,
        t: &Topology,
        a: &ColorAssignment,
        active_borrows: &[Lease],
        lambdas: &[f64],
        alpha: f64,
    ) -> Result<Option<ProtocolMessage>, ProtocolError> {
        if Color((now % self.chi as u64) as u32) != self.my_color {
            return Err(ProtocolError::NotOwnSlot {
                node: self.my_id,
                now,
                color: self.my_color,
                chi: self.chi,
            });
        }
        if !self.lender_class {
            return Err(ProtocolError::NotALender(self.my_id));
        }
        if self.sleeping(now) {
            return Err(ProtocolError::AlreadySleeping(self.my_id));
        }
        let duration = lease_duration(alpha, t.max_degree(), self.lambda)?;
        if duration == 0 {
            return Ok(None);
        }
        let eligible = compute_eligible_set(t, a, self.my_id, self.my_color, active_borrows, lambdas);
        if eligible.is_empty() {
            return Ok(None);
        }
        let expiry = if self.departing {
            Expiry::Never
        } else {
            Expiry::At(now + duration)
        };
        self.sleep_until = Some(expiry);
        self.offer = Some(OutstandingOffer {
            color: self.my_color,
            expiry,
            placed_at: now,
            interest_heard: false,
        });
        Ok(Some(ProtocolMessage::LendColor {
            lender: self.my_id,
            color: self.my_color,
            expiry,
            eligible,
        }))
    }

    /// Optional heuristic (`cancel_sleep_on_no_interest`): a lender that
    /// heard no bid for its live offer by a later own slot wakes up instead
    /// of sleeping through a lease nobody wanted. Returns true if sleep was
    /// cancelled.
    pub fn cancel_sleep_if_ignored(&mut self, now: Slot) -> bool {
        let Some(offer) = self.offer else {
            return false;
        };
        if !self.sleeping(now) || offer.interest_heard || now <= offer.placed_at {
            return false;
        }
        if Color((now % self.chi as u64) as u32) != self.my_color {
            return false;
        }
        self.sleep_until = None;
        self.offer = None;
        true
    }

    /// Handles a slot offer. Non-members discard it; a member opens a bid,
    /// queues its `InterestInColor`, and credits the lender's endorsement —
    /// the offer names this node, and the lender sleeps before it could ever
    /// send a `FirstConfirm` of its own.
    pub fn on_lend_color(&mut self, msg: &ProtocolMessage, now: Slot) -> Option<Lease> {
        let ProtocolMessage::LendColor {
            lender,
            color,
            expiry,
            eligible,
        } = msg
        else {
            self.protocol_errors += 1;
            return None;
        };
        if !eligible.contains(&self.my_id) {
            return None;
        }
        if let Some(existing) = self.candidacies.get(color) {
            if existing.expiry.is_live(now) {
                // A live bid for this color is already open; unreachable in a
                // well-formed run (the only lender of this color is asleep).
                return None;
            }
        }
        let mut endorsers = BTreeSet::new();
        endorsers.insert(*lender);
        self.candidacies.insert(
            *color,
            Candidacy {
                expiry: *expiry,
                lender: *lender,
                endorsers,
            },
        );
        self.outbox.push(OutboxItem::Interest {
            color: *color,
            expiry: *expiry,
        });
        self.try_grant(*color, now)
    }

    /// Handles a candidate's bid. The arbitration slot for that color takes
    /// the strongest candidate while no broadcast endorsement is live.
    pub fn on_interest_in_color(&mut self, msg: &ProtocolMessage, now: Slot) {
        let ProtocolMessage::InterestInColor {
            sender,
            color,
            expiry,
            lambda,
        } = msg
        else {
            self.protocol_errors += 1;
            return;
        };
        if let Some(offer) = self.offer.as_mut() {
            if offer.color == *color && offer.expiry == *expiry {
                offer.interest_heard = true;
            }
        }
        if let Some(locked) = self.endorsed.get(color) {
            if locked.expiry.is_live(now) {
                return; // Committed elsewhere until the window ends.
            }
            self.endorsed.remove(color);
        }
        let entry = CandidateEntry {
            color: *color,
            expiry: *expiry,
            lambda: *lambda,
            id: *sender,
        };
        match self.pending_endorsements.get(color) {
            Some(current) if !entry.beats(current) => {}
            _ => {
                self.pending_endorsements.insert(*color, entry);
            }
        }
    }

    /// Handles arbitration verdicts. Entries naming this node feed its open
    /// bid; the borrow is granted the moment every 1-hop neighbor has
    /// endorsed it.
    pub fn on_first_confirm(&mut self, msg: &ProtocolMessage, now: Slot) -> Option<Lease> {
        let ProtocolMessage::FirstConfirm { sender, entries } = msg else {
            self.protocol_errors += 1;
            return None;
        };
        let mut granted = None;
        for entry in entries {
            if entry.id != self.my_id {
                continue;
            }
            let Some(candidacy) = self.candidacies.get_mut(&entry.color) else {
                continue;
            };
            // The verdict must belong to the same lease window as the bid;
            // stale endorsements from a previous round do not count.
            if candidacy.expiry != entry.expiry || !candidacy.expiry.is_live(now) {
                continue;
            }
            candidacy.endorsers.insert(*sender);
            if let Some(lease) = self.try_grant(entry.color, now) {
                granted = Some(lease);
            }
        }
        granted
    }

    fn try_grant(&mut self, color: Color, now: Slot) -> Option<Lease> {
        let candidacy = self.candidacies.get(&color)?;
        if !candidacy.expiry.is_live(now) || candidacy.endorsers.len() < self.degree {
            return None;
        }
        let lease = Lease {
            borrower: self.my_id,
            color,
            expiry: candidacy.expiry,
            lender: candidacy.lender,
        };
        self.candidacies.remove(&color);
        self.bcolors.push(lease);
        self.leases_granted += 1;
        self.outbox.push(OutboxItem::AnnounceBorrows);
        Some(lease)
    }

    /// Handles borrow announcements. Hop 1 feeds `d1colors` and queues the
    /// one-hop relay of the unchanged payload; hop 2 feeds `d2colors`. Any
    /// other hop is a protocol error: counted, message dropped.
    pub fn on_last_confirm(&mut self, msg: &ProtocolMessage, now: Slot) {
        let ProtocolMessage::LastConfirm { colors, hop, .. } = msg else {
            self.protocol_errors += 1;
            return;
        };
        let table = match hop {
            1 => &mut self.d1colors,
            2 => &mut self.d2colors,
            _ => {
                self.protocol_errors += 1;
                return;
            }
        };
        for &(color, expiry) in colors {
            if !expiry.is_live(now) {
                continue;
            }
            table
                .entry(color)
                .and_modify(|e| {
                    if expiry > *e {
                        *e = expiry;
                    }
                })
                .or_insert(expiry);
        }
        if *hop == 1 {
            self.outbox.push(OutboxItem::Relay {
                colors: colors.clone(),
            });
        }
    }

    /// Materializes queued control responses for a slot this node transmits
    /// in. Bids whose window already closed are suppressed; arbitration
    /// verdicts are broadcast and locked in one step.
    pub fn drain_outbox(&mut self, now: Slot) -> Vec<ProtocolMessage> {
        let mut out = Vec::new();
        for item in std::mem::take(&mut self.outbox) {
            match item {
                OutboxItem::Interest { color, expiry } => {
                    if expiry.is_live(now) {
                        out.push(ProtocolMessage::InterestInColor {
                            sender: self.my_id,
                            color,
                            expiry,
                            lambda: self.lambda,
                        });
                    } else {
                        self.suppressed_interests += 1;
                    }
                }
                OutboxItem::AnnounceBorrows => {
                    let live: Vec<(Color, Expiry)> = self
                        .bcolors
                        .iter()
                        .filter(|l| l.expiry.is_live(now))
                        .map(|l| (l.color, l.expiry))
                        .collect();
                    if !live.is_empty() {
                        out.push(ProtocolMessage::LastConfirm {
                            sender: self.my_id,
                            colors: live,
                            hop: 1,
                        });
                    }
                }
                OutboxItem::Relay { colors } => {
                    out.push(ProtocolMessage::LastConfirm {
                        sender: self.my_id,
                        colors,
                        hop: 2,
                    });
                }
            }
        }
        // Broadcasting the pending verdicts locks them for their windows.
        self.prune_expired(now);
        if !self.pending_endorsements.is_empty() {
            let entries: Vec<CandidateEntry> =
                self.pending_endorsements.values().copied().collect();
            for e in &entries {
                self.endorsed.insert(e.color, *e);
            }
            self.pending_endorsements.clear();
            out.push(ProtocolMessage::FirstConfirm {
                sender: self.my_id,
                entries,
            });
        }
        out
    }

    /// Installs a lease directly, bypassing the handshake. Test fixtures use
    /// this to force rule-breaking worlds the protocol itself never produces.
    #[cfg(test)]
    pub(crate) fn test_install_lease(&mut self, lease: Lease) {
        self.bcolors.push(lease);
    }

    /// Drops state whose lease window has closed: bids, arbitration entries,
    /// finished borrows, and the lender's own completed offer.
    pub fn prune_expired(&mut self, now: Slot) {
        self.candidacies.retain(|_, c| c.expiry.is_live(now));
        self.pending_endorsements.retain(|_, e| e.expiry.is_live(now));
        self.endorsed.retain(|_, e| e.expiry.is_live(now));
        self.bcolors.retain(|l| l.expiry.is_live(now));
        self.d1colors.retain(|_, e| e.is_live(now));
        self.d2colors.retain(|_, e| e.is_live(now));
        if let Some(offer) = self.offer {
            if !offer.expiry.is_live(now) {
                self.offer = None;
            }
        }
        if let Some(until) = self.sleep_until {
            if !until.is_live(now) {
                self.sleep_until = None;
            }
        }
    }
}
