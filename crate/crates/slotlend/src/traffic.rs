//! Sensor traffic: Poisson packet arrivals and the bounded transmit buffer.
//!
//! Arrival timestamps are continuous (fractional slot units); buffer
//! decisions happen at arrival instants, transmissions at slot boundaries.
//! Every node draws from its own deterministic RNG sub-stream, so arrival
//! histories are identical between paired runs and unaffected by what other
//! nodes do.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("arrival rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("window start {from} must not exceed end {to}")]
    BadWindow { from: f64, to: f64 },
    #[error("reserved slice {reserved} exceeds buffer size {size}")]
    BadReservation { size: usize, reserved: usize },
}

/// One sensed packet waiting to be transmitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub origin: NodeId,
    /// Arrival instant in fractional slot units.
    pub arrival: f64,
}

/// What the buffer did with an offered packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    /// Buffer full; the packet is lost and counted.
    Dropped,
}

/// Splitmix64 step; used to derive independent sub-stream seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of one labeled sub-stream of a scenario seed.
/// Adding or removing streams never perturbs the others.
pub fn subseed(seed: u64, label: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label ^ splitmix64(index)))
}

/// Derives the RNG for one labeled sub-stream of a scenario seed.
pub fn substream(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, label, index))
}

/// Sub-stream labels used by the simulator. Kept in one place so no two
/// consumers collide.
pub mod stream_label {
    pub const PLACEMENT: u64 = 1;
    pub const CLASSES: u64 = 2;
    pub const RATES: u64 = 3;
    pub const ARRIVALS: u64 = 4;
    pub const REPLICATION: u64 = 5;
}

/// Samples a Poisson process of rate `lambda` (arrivals per slot) on the
/// window `[from, to)`: exponential inter-arrival gaps, strictly increasing
/// timestamps. The RNG is consumed one draw per arrival (plus one final draw
/// that overshoots the window), so consecutive windows concatenate cleanly.
pub fn sample_arrivals(
    lambda: f64,
    from: f64,
    to: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, TrafficError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(TrafficError::BadRate(lambda));
    }
    if from > to {
        return Err(TrafficError::BadWindow { from, to });
    }
    let exp = Exp::new(lambda).expect("validated above");
    let mut out = Vec::new();
    let mut t = from + exp.sample(rng);
    while t < to {
        out.push(t);
        t += exp.sample(rng);
    }
    Ok(out)
}

/// Lazy per-node arrival sequence for the engine: same distribution as
/// `sample_arrivals`, generated incrementally so a run only pays for the
/// arrivals it consumes.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    rng: ChaCha8Rng,
    exp: Exp<f64>,
    /// Next arrival instant not yet handed out.
    pending: f64,
}

impl ArrivalStream {
    pub fn new(lambda: f64, seed: u64, node: NodeId) -> Result<ArrivalStream, TrafficError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TrafficError::BadRate(lambda));
        }
        let mut rng = substream(seed, stream_label::ARRIVALS, node.0 as u64);
        let exp = Exp::new(lambda).expect("validated above");
        let pending = exp.sample(&mut rng);
        Ok(ArrivalStream { rng, exp, pending })
    }

    /// Time of the next arrival that has not been consumed yet.
    pub fn peek(&self) -> f64 {
        self.pending
    }

    /// Consumes and returns the next arrival if it lands before `t_end`.
    pub fn next_before(&mut self, t_end: f64) -> Option<f64> {
        if self.pending < t_end {
            let t = self.pending;
            self.pending += self.exp.sample(&mut self.rng);
            Some(t)
        } else {
            None
        }
    }
}

/// Bounded FIFO transmit buffer. The capacity is split into an `m` slice for
/// locally sensed packets and an `f` slice reserved for relay traffic; this
/// simulator generates no relay traffic, so the `f` slice only shrinks `m`.
#[derive(Debug, Clone)]
pub struct Buffer {
    queue: std::collections::VecDeque<Packet>,
    capacity_m: usize,
    capacity_f: usize,
    sensed: u64,
    dropped: u64,
    flushed: u64,
    /// Sum of (flush instant - arrival instant) over flushed packets, slots.
    total_wait: f64,
}

impl Buffer {
    /// `size` is the total buffer size; `reserved` the relay slice.
    pub fn new(size: usize, reserved: usize) -> Result<Buffer, TrafficError> {
        if reserved > size {
            return Err(TrafficError::BadReservation { size, reserved });
        }
        Ok(Buffer {
            queue: std::collections::VecDeque::new(),
            capacity_m: size - reserved,
            capacity_f: reserved,
            sensed: 0,
            dropped: 0,
            flushed: 0,
            total_wait: 0.0,
        })
    }

    pub fn capacity_m(&self) -> usize {
        self.capacity_m
    }

    pub fn capacity_f(&self) -> usize {
        self.capacity_f
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Offers a sensed packet; drops it (and counts the loss) if the local
    /// slice is full.
    pub fn enqueue(&mut self, p: Packet) -> EnqueueOutcome {
        self.sensed += 1;
        if self.queue.len() < self.capacity_m {
            self.queue.push_back(p);
            EnqueueOutcome::Accepted
        } else {
            self.dropped += 1;
            EnqueueOutcome::Dropped
        }
    }

    /// Empties the buffer into one transmission completing at time `now`
    /// (slot units). Waiting time per packet is `now - arrival`.
    pub fn flush(&mut self, now: f64) -> Vec<Packet> {
        let drained: Vec<Packet> = self.queue.drain(..).collect();
        for p in &drained {
            debug_assert!(p.arrival <= now, "packet flushed before it arrived");
            self.total_wait += now - p.arrival;
        }
        self.flushed += drained.len() as u64;
        drained
    }

    pub fn sensed(&self) -> u64 {
        self.sensed
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn flushed(&self) -> u64 {
        self.flushed
    }

    /// Packets still waiting; closes the conservation identity
    /// `sensed == flushed + dropped + residual`.
    pub fn residual(&self) -> u64 {
        self.queue.len() as u64
    }

    pub fn total_wait(&self) -> f64 {
        self.total_wait
    }

    /// Mean waiting time of flushed packets, slots. `None` until something
    /// has been flushed.
    pub fn mean_wait(&self) -> Option<f64> {
        (self.flushed > 0).then(|| self.total_wait / self.flushed as f64)
    }
}

/// Draws a per-node arrival rate uniformly from `[lo, hi]` (arrivals per
/// minute, as configs state them).
pub fn draw_rate(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}
