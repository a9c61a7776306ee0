//! Event trace: a flat, line-oriented record of everything observable a run
//! does, plus the audits that read it back.
//!
//! Each record renders as one stable text line
//!
//! ```text
//! <slot> <node> <event> key=value ...
//! ```
//!
//! so traces diff cleanly across runs (the determinism contract is literal
//! byte equality) and stay grep-able for conformance checks. The audits at
//! the bottom are pure functions over recorded traces: they re-derive lease
//! windows from `borrow` events and check that borrowed-slot transmissions
//! stay inside them and that overlapping same-color borrows are never within
//! two hops of each other.

use std::fmt;
use std::io::{self, BufWriter, Write};

use crate::coloring::Color;
use crate::protocol::{CandidateEntry, Expiry, Slot};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WakeReason {
    /// The lease the node slept through ran out.
    Expiry,
    /// `cancel_sleep_on_no_interest`: the offer drew no bid.
    NoInterest,
}

impl fmt::Display for WakeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WakeReason::Expiry => "expiry",
            WakeReason::NoInterest => "no_interest",
        })
    }
}

/// One traceable occurrence. The owning [`TraceRecord`] supplies slot and
/// node; payload fields live here.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    /// A lender offered its color (`to` = eligible set, best first).
    Lend {
        color: Color,
        until: Expiry,
        to: Vec<NodeId>,
    },
    /// A candidate broadcast its bid.
    Interest {
        color: Color,
        until: Expiry,
        lambda: f64,
    },
    /// An arbiter broadcast its verdicts.
    FirstConfirm { entries: Vec<CandidateEntry> },
    /// A borrow announcement (hop 1) or its relay (hop 2).
    LastConfirm {
        hop: u8,
        colors: Vec<(Color, Expiry)>,
    },
    /// The node's bid completed: it now borrows `color`.
    Borrow {
        color: Color,
        until: Expiry,
        lender: NodeId,
        cnt: usize,
    },
    /// A borrow reached its expiry slot.
    Expire { color: Color, lender: NodeId },
    /// The node powered its data plane down.
    Sleep { until: Expiry },
    Wake { reason: WakeReason },
    /// The node transmitted: data packets and/or control messages.
    Tx {
        slot_color: Color,
        owned: bool,
        data: usize,
        control: usize,
    },
    /// Collision audit hit: this node and `peer` both transmitted.
    Collision { peer: NodeId, hop: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub slot: Slot,
    pub node: NodeId,
    pub event: TraceEvent,
}

fn write_ids(f: &mut fmt::Formatter<'_>, ids: &[NodeId]) -> fmt::Result {
    for (k, id) in ids.iter().enumerate() {
        if k > 0 {
            f.write_str(",")?;
        }
        write!(f, "{id}")?;
    }
    Ok(())
}

fn write_colors(f: &mut fmt::Formatter<'_>, colors: &[(Color, Expiry)]) -> fmt::Result {
    for (k, (c, e)) in colors.iter().enumerate() {
        if k > 0 {
            f.write_str(",")?;
        }
        write!(f, "{c}:{e}")?;
    }
    Ok(())
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ", self.slot, self.node)?;
        match &self.event {
            TraceEvent::Lend { color, until, to } => {
                write!(f, "lend color={color} until={until} to=")?;
                write_ids(f, to)
            }
            TraceEvent::Interest {
                color,
                until,
                lambda,
            } => {
                write!(f, "interest color={color} until={until} lambda={lambda}")
            }
            TraceEvent::FirstConfirm { entries } => {
                f.write_str("first_confirm entries=")?;
                for (k, e) in entries.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}:{}:{}:{}", e.color, e.expiry, e.lambda, e.id)?;
                }
                Ok(())
            }
            TraceEvent::LastConfirm { hop, colors } => {
                write!(f, "last_confirm hop={hop} colors=")?;
                write_colors(f, colors)
            }
            TraceEvent::Borrow {
                color,
                until,
                lender,
                cnt,
            } => {
                write!(f, "borrow color={color} until={until} lender={lender} cnt={cnt}")
            }
            TraceEvent::Expire { color, lender } => {
                write!(f, "expire color={color} lender={lender}")
            }
            TraceEvent::Sleep { until } => write!(f, "sleep until={until}"),
            TraceEvent::Wake { reason } => write!(f, "wake reason={reason}"),
            TraceEvent::Tx {
                slot_color,
                owned,
                data,
                control,
            } => {
                let kind = if *owned { "own" } else { "borrowed" };
                write!(f, "tx color={slot_color} kind={kind} data={data} control={control}")
            }
            TraceEvent::Collision { peer, hop } => {
                write!(f, "collision peer={peer} hop={hop}")
            }
        }
    }
}

/// Where trace records go. `Null` costs nothing, `Memory` keeps structured
/// records for audits, `File` streams rendered lines to disk.
pub enum TraceSink {
    Null,
    Memory(Vec<TraceRecord>),
    File(BufWriter<std::fs::File>),
}

impl TraceSink {
    pub fn memory() -> TraceSink {
        TraceSink::Memory(Vec::new())
    }

    pub fn file(path: &std::path::Path) -> io::Result<TraceSink> {
        Ok(TraceSink::File(BufWriter::new(std::fs::File::create(path)?)))
    }

    /// True when emitting has a consumer; lets hot paths skip building
    /// payload vectors for `Null`.
    pub fn enabled(&self) -> bool {
        !matches!(self, TraceSink::Null)
    }

    pub fn emit(&mut self, record: TraceRecord) -> io::Result<()> {
        match self {
            TraceSink::Null => Ok(()),
            TraceSink::Memory(records) => {
                records.push(record);
                Ok(())
            }
            TraceSink::File(w) => writeln!(w, "{record}"),
        }
    }

    pub fn finish(&mut self) -> io::Result<()> {
        if let TraceSink::File(w) = self {
            w.flush()?;
        }
        Ok(())
    }

    /// Collected records (empty unless this is a `Memory` sink).
    pub fn records(&self) -> &[TraceRecord] {
        match self {
            TraceSink::Memory(records) => records,
            _ => &[],
        }
    }

    /// Rendered lines of a `Memory` sink, exactly as `File` would write them.
    pub fn lines(&self) -> Vec<String> {
        self.records().iter().map(|r| r.to_string()).collect()
    }
}

/// Closed-open lease window rebuilt from a `borrow` record.
#[derive(Debug, Clone, Copy)]
struct BorrowWindow {
    node: NodeId,
    color: Color,
    from: Slot,
    until: Expiry,
}

fn windows(records: &[TraceRecord]) -> Vec<BorrowWindow> {
    records
        .iter()
        .filter_map(|r| match &r.event {
            TraceEvent::Borrow { color, until, .. } => Some(BorrowWindow {
                node: r.node,
                color: *color,
                from: r.slot,
                until: *until,
            }),
            _ => None,
        })
        .collect()
}

fn upper(e: Expiry) -> u64 {
    match e {
        Expiry::At(t) => t,
        Expiry::Never => u64::MAX,
    }
}

/// Every transmission in a non-owned slot must sit inside a lease window the
/// trace granted to that node for that color. Returns one line per breach.
pub fn audit_borrowed_expiry(records: &[TraceRecord]) -> Vec<String> {
    let windows = windows(records);
    let mut violations = Vec::new();
    for r in records {
        let TraceEvent::Tx {
            slot_color,
            owned: false,
            ..
        } = &r.event
        else {
            continue;
        };
        let covered = windows.iter().any(|w| {
            w.node == r.node && w.color == *slot_color && w.from <= r.slot && w.until.is_live(r.slot)
        });
        if !covered {
            violations.push(format!(
                "slot {} node {} transmitted on color {} outside any lease window",
                r.slot, r.node, slot_color
            ));
        }
    }
    violations
}

/// No two borrows of the same color with overlapping windows may sit within
/// two hops of each other — the single-winner guarantee.
pub fn audit_single_winner(records: &[TraceRecord], t: &Topology) -> Vec<String> {
    let windows = windows(records);
    let mut violations = Vec::new();
    for (i, a) in windows.iter().enumerate() {
        for b in windows.iter().skip(i + 1) {
            if a.color != b.color || a.node == b.node {
                continue;
            }
            let overlap = a.from < upper(b.until) && b.from < upper(a.until);
            if overlap && t.within_two_hops(a.node, b.node) {
                violations.push(format!(
                    "color {} borrowed by {} (from {}) and {} (from {}) within two hops",
                    a.color, a.node, a.from, b.node, b.from
                ));
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::from_edges;

    fn rec(slot: Slot, node: u32, event: TraceEvent) -> TraceRecord {
        TraceRecord {
            slot,
            node: NodeId(node),
            event,
        }
    }

    #[test]
    fn record_rendering_is_stable() {
        let cases = vec![
            (
                rec(
                    17,
                    4,
                    TraceEvent::Lend {
                        color: Color(2),
                        until: Expiry::At(24),
                        to: vec![NodeId(9), NodeId(3)],
                    },
                ),
                "17 4 lend color=2 until=24 to=9,3",
            ),
            (
                rec(
                    18,
                    9,
                    TraceEvent::Interest {
                        color: Color(2),
                        until: Expiry::At(24),
                        lambda: 0.05,
                    },
                ),
                "18 9 interest color=2 until=24 lambda=0.05",
            ),
            (
                rec(
                    19,
                    3,
                    TraceEvent::FirstConfirm {
                        entries: vec![CandidateEntry {
                            color: Color(2),
                            expiry: Expiry::At(24),
                            lambda: 0.05,
                            id: NodeId(9),
                        }],
                    },
                ),
                "19 3 first_confirm entries=2:24:0.05:9",
            ),
            (
                rec(
                    20,
                    9,
                    TraceEvent::LastConfirm {
                        hop: 1,
                        colors: vec![(Color(2), Expiry::At(24)), (Color(5), Expiry::Never)],
                    },
                ),
                "20 9 last_confirm hop=1 colors=2:24,5:inf",
            ),
            (
                rec(
                    19,
                    9,
                    TraceEvent::Borrow {
                        color: Color(2),
                        until: Expiry::At(24),
                        lender: NodeId(4),
                        cnt: 3,
                    },
                ),
                "19 9 borrow color=2 until=24 lender=4 cnt=3",
            ),
            (
                rec(
                    24,
                    9,
                    TraceEvent::Expire {
                        color: Color(2),
                        lender: NodeId(4),
                    },
                ),
                "24 9 expire color=2 lender=4",
            ),
            (
                rec(17, 4, TraceEvent::Sleep { until: Expiry::At(24) }),
                "17 4 sleep until=24",
            ),
            (
                rec(24, 4, TraceEvent::Wake { reason: WakeReason::Expiry }),
                "24 4 wake reason=expiry",
            ),
            (
                rec(
                    21,
                    9,
                    TraceEvent::Tx {
                        slot_color: Color(2),
                        owned: false,
                        data: 3,
                        control: 0,
                    },
                ),
                "21 9 tx color=2 kind=borrowed data=3 control=0",
            ),
            (
                rec(
                    30,
                    3,
                    TraceEvent::Collision {
                        peer: NodeId(7),
                        hop: 2,
                    },
                ),
                "30 3 collision peer=7 hop=2",
            ),
        ];
        for (record, expected) in cases {
            assert_eq!(record.to_string(), expected);
        }
    }

    #[test]
    fn memory_sink_collects_and_renders() {
        let mut sink = TraceSink::memory();
        assert!(sink.enabled());
        assert!(!TraceSink::Null.enabled());
        sink.emit(rec(1, 2, TraceEvent::Wake { reason: WakeReason::NoInterest }))
            .unwrap();
        assert_eq!(sink.lines(), vec!["1 2 wake reason=no_interest".to_string()]);
    }

    #[test]
    fn file_sink_writes_identical_lines() {
        let dir = std::env::temp_dir().join(format!("slotlend-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.trace");
        let record = rec(
            5,
            1,
            TraceEvent::Lend {
                color: Color(0),
                until: Expiry::Never,
                to: vec![NodeId(2)],
            },
        );
        let mut sink = TraceSink::file(&path).unwrap();
        sink.emit(record.clone()).unwrap();
        sink.finish().unwrap();
        let contents = std::fs::read_to_string(&path).unwrap();
        assert_eq!(contents, format!("{record}\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn expiry_audit_flags_uncovered_borrowed_tx() {
        let covered = vec![
            rec(
                10,
                3,
                TraceEvent::Borrow {
                    color: Color(1),
                    until: Expiry::At(20),
                    lender: NodeId(0),
                    cnt: 2,
                },
            ),
            rec(
                15,
                3,
                TraceEvent::Tx {
                    slot_color: Color(1),
                    owned: false,
                    data: 1,
                    control: 0,
                },
            ),
        ];
        assert!(audit_borrowed_expiry(&covered).is_empty());

        // Transmission at the expiry slot itself is a breach (strict bound),
        // as is one with no matching borrow at all.
        let late = vec![
            covered[0].clone(),
            rec(
                20,
                3,
                TraceEvent::Tx {
                    slot_color: Color(1),
                    owned: false,
                    data: 1,
                    control: 0,
                },
            ),
            rec(
                12,
                7,
                TraceEvent::Tx {
                    slot_color: Color(1),
                    owned: false,
                    data: 0,
                    control: 1,
                },
            ),
        ];
        let violations = audit_borrowed_expiry(&late);
        assert_eq!(violations.len(), 2);
        assert!(violations[0].contains("slot 20 node 3"));
        assert!(violations[1].contains("node 7"));
        // Owned transmissions are never flagged.
        let owned = vec![rec(
            9,
            5,
            TraceEvent::Tx {
                slot_color: Color(0),
                owned: true,
                data: 2,
                control: 0,
            },
        )];
        assert!(audit_borrowed_expiry(&owned).is_empty());
    }

    #[test]
    fn single_winner_audit_flags_close_overlaps_only() {
        // Path 0-1-2-3-4: nodes 0 and 2 are two hops apart, 0 and 4 four.
        let t = from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let borrow = |slot, node, until| {
            rec(
                slot,
                node,
                TraceEvent::Borrow {
                    color: Color(6),
                    until,
                    lender: NodeId(1),
                    cnt: 1,
                },
            )
        };
        // Overlapping windows at hop distance 2: violation.
        let close = vec![borrow(10, 0, Expiry::At(30)), borrow(20, 2, Expiry::At(40))];
        assert_eq!(audit_single_winner(&close, &t).len(), 1);
        // Same windows four hops apart: fine.
        let far = vec![borrow(10, 0, Expiry::At(30)), borrow(20, 4, Expiry::At(40))];
        assert!(audit_single_winner(&far, &t).is_empty());
        // Disjoint windows at hop distance 2: fine (sequential reuse).
        let sequential = vec![borrow(10, 0, Expiry::At(20)), borrow(20, 2, Expiry::At(40))];
        assert!(audit_single_winner(&sequential, &t).is_empty());
        // A permanent lease overlaps everything after it.
        let forever = vec![borrow(10, 0, Expiry::Never), borrow(500, 2, Expiry::At(600))];
        assert_eq!(audit_single_winner(&forever, &t).len(), 1);
        // Different colors never conflict.
        let other = vec![
            borrow(10, 0, Expiry::At(30)),
            rec(
                20,
                2,
                TraceEvent::Borrow {
                    color: Color(7),
                    until: Expiry::At(40),
                    lender: NodeId(3),
                    cnt: 1,
                },
            ),
        ];
        assert!(audit_single_winner(&other, &t).is_empty());
    }
}
