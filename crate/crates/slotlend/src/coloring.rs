//! Slot assignment as distance-2 graph coloring.
//!
//! Two nodes within two hops of each other must not share a color, otherwise
//! their transmissions could meet at a common receiver. The frame length
//! equals the number of colors used (chi), and a node owns the slots where
//! `clock % chi == color`.
//!
//! The assignment is produced by a deterministic sequential greedy sweep —
//! a stand-in for the distributed coloring pass that would run at deployment
//! time. It guarantees validity and `chi <= max_degree^2 + 1`, not minimality.

use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

use crate::topology::{NodeId, Topology};

/// A slot color; the frame position a node owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Color(pub u32);

impl Color {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for Color {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ColoringError {
    #[error("assignment covers {got} nodes but the topology has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("assignment file malformed at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A total color assignment over a topology's nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorAssignment {
    colors: Vec<Color>,
    chi: u32,
}

/// A distance-2 conflict: two nodes within two hops sharing a color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub a: NodeId,
    pub b: NodeId,
    pub color: Color,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "nodes {} and {} within two hops share color {}",
            self.a, self.b, self.color
        )
    }
}

impl ColorAssignment {
    pub fn color(&self, v: NodeId) -> Color {
        self.colors[v.idx()]
    }

    /// Number of distinct colors in use; also the TDMA frame length.
    pub fn chi(&self) -> u32 {
        self.chi
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Direct construction for tests and file loads; recomputes chi.
    pub fn from_colors(colors: Vec<Color>) -> ColorAssignment {
        let chi = colors.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        ColorAssignment { colors, chi }
    }

    /// Export format: `chi <value>` header, then one `id color` line per node.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "chi {}", self.chi).unwrap();
        for (i, c) in self.colors.iter().enumerate() {
            writeln!(out, "{i} {c}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ColorAssignment, ColoringError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ColoringError::Malformed {
            line: 1,
            reason: "empty input".into(),
        })?;
        let chi: u32 = header
            .strip_prefix("chi ")
            .and_then(|v| v.parse().ok())
            .ok_or(ColoringError::Malformed {
                line: 1,
                reason: "expected `chi <value>` header".into(),
            })?;
        let mut pairs = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            let id: usize = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or(ColoringError::Malformed {
                    line: lineno + 1,
                    reason: "bad node id".into(),
                })?;
            let color: u32 = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or(ColoringError::Malformed {
                    line: lineno + 1,
                    reason: "bad color".into(),
                })?;
            pairs.push((id, color));
        }
        let n = pairs.len();
        let mut colors = vec![None; n];
        for (id, color) in pairs {
            if id >= n {
                return Err(ColoringError::Malformed {
                    line: 0,
                    reason: format!("node id {id} out of range 0..{n}"),
                });
            }
            colors[id] = Some(Color(color));
        }
        let colors: Vec<Color> = colors
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or(ColoringError::Malformed {
                    line: 0,
                    reason: format!("node {i} missing from assignment"),
                })
            })
            .collect::<Result<_, _>>()?;
        let derived = colors.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        if derived > chi {
            return Err(ColoringError::Malformed {
                line: 1,
                reason: format!("header chi {chi} smaller than max color + 1 = {derived}"),
            });
        }
        Ok(ColorAssignment { colors, chi })
    }

    pub fn save(&self, path: &Path) -> Result<(), ColoringError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ColorAssignment, ColoringError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Greedy sequential distance-2 coloring: nodes in ascending id order, each
/// takes the smallest color unused within its 2-hop neighborhood.
///
/// At most `|N1(v)| + |N2(v)|` colors are blocked when `v` is processed, so
/// the result needs at most `max_degree^2 + 1` colors.
pub fn greedy_distance2(t: &Topology) -> ColorAssignment {
    let n = t.len();
    let mut colors: Vec<Option<Color>> = vec![None; n];
    let mut blocked = Vec::new();
    for v in t.node_ids() {
        blocked.clear();
        for hops in 1..=2 {
            for &u in t.neighbors_exact(v, hops) {
                if let Some(c) = colors[u.idx()] {
                    blocked.push(c);
                }
            }
        }
        blocked.sort_unstable();
        blocked.dedup();
        let mut pick = 0u32;
        for c in &blocked {
            if c.0 == pick {
                pick += 1;
            } else if c.0 > pick {
                break;
            }
        }
        colors[v.idx()] = Some(Color(pick));
    }
    ColorAssignment::from_colors(colors.into_iter().map(Option::unwrap).collect())
}

/// Checks every pair within hop distance <= 2 for color clashes. Returns all
/// violations (empty means valid), each reported once with `a < b`.
pub fn verify_distance2(
    t: &Topology,
    a: &ColorAssignment,
) -> Result<Vec<Violation>, ColoringError> {
    if a.len() != t.len() {
        return Err(ColoringError::SizeMismatch {
            expected: t.len(),
            got: a.len(),
        });
    }
    let mut violations = Vec::new();
    for u in t.node_ids() {
        for hops in 1..=2 {
            for &v in t.neighbors_exact(u, hops) {
                if v > u && a.color(u) == a.color(v) {
                    violations.push(Violation {
                        a: u,
                        b: v,
                        color: a.color(u),
                    });
                }
            }
        }
    }
    Ok(violations)
}
