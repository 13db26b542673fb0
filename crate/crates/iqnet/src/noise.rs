//! Deterministic, key-addressed realizations of the driving point
//! processes: one arrival stream of rate `lambda` and one unit-rate
//! potential-departure stream with uniform marks per site.
//!
//! Time is cut into fixed-width slabs. The content of a slab is a pure
//! function of `(seed, site, slab index, stream kind)`, so regenerating a
//! slab yields bit-identical epochs, a coupled run can replay the exact
//! noise of another run, and extending a window into the past (as the
//! backward sampler does when it doubles its horizon) reuses the noise on
//! the overlap without storing any of it.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use std::collections::VecDeque;

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Default slab width in time units.
pub const DEFAULT_SLAB_WIDTH: f64 = 16.0;

/// Which of the two per-site streams a key addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Arrival,
    Departure,
}

/// Address of one stream on one time slab at one site.
///
/// Distinct keys yield statistically independent streams; equal keys
/// regenerate bit-identical ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub site: Vec<i64>,
    pub slab_index: i64,
    pub kind: StreamKind,
}

/// Epochs of both streams on one slab at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlab {
    /// Slab window `[t0, t0 + width)`.
    pub t0: f64,
    pub width: f64,
    /// Arrival epochs, strictly increasing, strictly inside the window.
    pub arrivals: Vec<f64>,
    /// Potential-departure `(epoch, mark)` pairs, epochs strictly
    /// increasing, marks in the open interval `(0, 1)`.
    pub departures: Vec<(f64, f64)>,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, site: &[i64], slab_index: i64, kind: StreamKind) -> ChaCha8Rng {
    let tag = match kind {
        StreamKind::Arrival => 0x41u64,
        StreamKind::Departure => 0x44u64,
    };
    let mut h = splitmix64(seed ^ tag);
    h = splitmix64(h ^ slab_index as u64);
    for &c in site {
        h = splitmix64(h ^ c as u64);
    }
    let mut bytes = [0u8; 32];
    for (lane, chunk) in bytes.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(h ^ (lane as u64).wrapping_mul(0xA076_1D64_78BD_642F));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// A uniform draw strictly inside `(0, 1)`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

fn stream_epochs(rng: &mut ChaCha8Rng, rate: f64, t0: f64, width: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let mean = rate * width;
    let count = Poisson::new(mean).expect("positive Poisson mean").sample(rng) as usize;
    let mut epochs: Vec<f64> = (0..count).map(|_| t0 + width * open_unit(rng)).collect();
    epochs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    epochs.dedup();
    epochs
}

/// Generates the slab addressed by `(seed, site, slab_index)`: the arrival
/// stream is a Poisson process of rate `lambda` on the slab window, the
/// departure stream a unit-rate Poisson process with independent uniform
/// marks. Deterministic in every argument.
pub fn generate_slab(seed: u64, site: &[i64], slab_index: i64, lambda: f64, width: f64) -> NoiseSlab {
    assert!(width > 0.0, "slab width must be positive");
    assert!(lambda >= 0.0, "arrival rate must be nonnegative");
    let t0 = slab_index as f64 * width;
    let arrivals = {
        let mut rng = stream_rng(seed, site, slab_index, StreamKind::Arrival);
        stream_epochs(&mut rng, lambda, t0, width)
    };
    let departures = {
        let mut rng = stream_rng(seed, site, slab_index, StreamKind::Departure);
        let epochs = stream_epochs(&mut rng, 1.0, t0, width);
        epochs.into_iter().map(|t| (t, open_unit(&mut rng))).collect()
    };
    NoiseSlab { t0, width, arrivals, departures }
}

/// Convenience wrapper generating the slab a [`NoiseKey`] points into.
pub fn generate_keyed_slab(key: &NoiseKey, lambda: f64, width: f64) -> NoiseSlab {
    generate_slab(key.seed, &key.site, key.slab_index, lambda, width)
}

/// One driving event at a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Arrival,
    /// Potential departure with its uniform mark.
    Departure { mark: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// Flat site index in the originating domain.
    pub site: usize,
    pub kind: EventKind,
}

/// Globally time-ordered merge of all per-site slabs covering a window.
///
/// Events are produced slab by slab, so memory stays proportional to one
/// slab's worth of events. Ties in time (probability zero, but the epoch
/// grid is finite) break by site index, arrivals first.
pub struct EventStream<'a> {
    dom: &'a Domain,
    seed: u64,
    lambda: f64,
    start: f64,
    end: f64,
    slab_width: f64,
    next_slab: i64,
    last_slab: i64,
    masked: bool,
    buf: VecDeque<Event>,
}

impl<'a> EventStream<'a> {
    fn fill_next_slab(&mut self) {
        let slab = self.next_slab;
        self.next_slab += 1;
        let mut events: Vec<Event> = Vec::new();
        let mut coords = Vec::new();
        for site in self.dom.sites() {
            coords.clear();
            coords.extend(self.dom.coords_of(site));
            let noise = generate_slab(self.seed, &coords, slab, self.lambda, self.slab_width);
            if !self.masked || self.dom.arrivals_allowed(site) {
                for &t in &noise.arrivals {
                    if t >= self.start && t < self.end {
                        events.push(Event { time: t, site, kind: EventKind::Arrival });
                    }
                }
            }
            for &(t, mark) in &noise.departures {
                if t >= self.start && t < self.end {
                    events.push(Event { time: t, site, kind: EventKind::Departure { mark } });
                }
            }
        }
        events.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.site.cmp(&b.site))
                .then(kind_rank(a.kind).cmp(&kind_rank(b.kind)))
        });
        self.buf.extend(events);
    }
}

fn kind_rank(kind: EventKind) -> u8 {
    match kind {
        EventKind::Arrival => 0,
        EventKind::Departure { .. } => 1,
    }
}

impl<'a> Iterator for EventStream<'a> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        loop {
            if let Some(ev) = self.buf.pop_front() {
                return Some(ev);
            }
            if self.next_slab > self.last_slab {
                return None;
            }
            self.fill_next_slab();
        }
    }
}

/// Event stream over `[window.0, window.1)` with arrivals at masked sites
/// suppressed. The window need not align to the slab grid; slabs are
/// padded and filtered.
pub fn merged_event_stream(
    dom: &Domain,
    seed: u64,
    lambda: f64,
    window: (f64, f64),
) -> Result<EventStream<'_>> {
    event_stream(dom, seed, lambda, window, true)
}

/// Like [`merged_event_stream`] but with arrivals at masked sites kept.
/// Coupled runs over domains with different masks share this stream and
/// apply their own masks at state-update time.
pub fn unmasked_event_stream(
    dom: &Domain,
    seed: u64,
    lambda: f64,
    window: (f64, f64),
) -> Result<EventStream<'_>> {
    event_stream(dom, seed, lambda, window, false)
}

fn event_stream(
    dom: &Domain,
    seed: u64,
    lambda: f64,
    window: (f64, f64),
    masked: bool,
) -> Result<EventStream<'_>> {
    let (start, end) = window;
    if !(end >= start) {
        return Err(Error::InvalidWindow { start, end });
    }
    let slab_width = DEFAULT_SLAB_WIDTH;
    let first = (start / slab_width).floor() as i64;
    let last = if end > start { ((end / slab_width).ceil() as i64) - 1 } else { first - 1 };
    Ok(EventStream {
        dom,
        seed,
        lambda,
        start,
        end,
        slab_width,
        next_slab: first,
        last_slab: last.max(first - 1),
        masked,
        buf: VecDeque::new(),
    })
}

/// Seed override from the environment variable `IQNET_SEED` (decimal,
/// 64-bit). An explicit config value takes precedence over this.
pub fn env_seed() -> Option<u64> {
    std::env::var("IQNET_SEED").ok().and_then(|s| s.trim().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_arrival_stream_is_empty() {
        let slab = generate_slab(7, &[0], 0, 0.0, 16.0);
        assert!(slab.arrivals.is_empty());
    }

    #[test]
    fn same_key_regenerates_bit_identical_slabs() {
        let a = generate_slab(42, &[3, -1], -5, 0.7, 16.0);
        let b = generate_slab(42, &[3, -1], -5, 0.7, 16.0);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_differ() {
        let base = generate_slab(42, &[0], 0, 0.5, 16.0);
        assert_ne!(generate_slab(43, &[0], 0, 0.5, 16.0), base);
        assert_ne!(generate_slab(42, &[1], 0, 0.5, 16.0), base);
        assert_ne!(generate_slab(42, &[0], 1, 0.5, 16.0), base);
    }

    #[test]
    fn slab_epochs_inside_window_and_increasing() {
        for slab_index in [-3i64, 0, 11] {
            let slab = generate_slab(9, &[2], slab_index, 1.5, 16.0);
            let t0 = slab_index as f64 * 16.0;
            for w in slab.arrivals.windows(2) {
                assert!(w[0] < w[1]);
            }
            for &t in &slab.arrivals {
                assert!(t > t0 && t < t0 + 16.0);
            }
            for &(t, u) in &slab.departures {
                assert!(t > t0 && t < t0 + 16.0);
                assert!(u > 0.0 && u < 1.0);
            }
        }
    }

    #[test]
    fn arrival_count_mean_matches_poisson() {
        // 10^4 slabs at lambda = 0.2, width 10: mean count 2, variance 2.
        let mut total = 0usize;
        let reps = 10_000;
        for r in 0..reps {
            let slab = generate_slab(1234, &[r as i64], 0, 0.2, 10.0);
            total += slab.arrivals.len();
        }
        let mean = total as f64 / reps as f64;
        let tol = 4.0 * (2.0f64 / reps as f64).sqrt();
        assert!((mean - 2.0).abs() < tol, "mean {mean} not within {tol} of 2");
    }

    #[test]
    fn epoch_uniformity_kolmogorov_smirnov() {
        // Pool >= 10^4 arrival epochs, rescale to (0,1), KS test at
        // significance 0.001.
        let mut pooled: Vec<f64> = Vec::new();
        let mut site = 0i64;
        while pooled.len() < 10_000 {
            let slab = generate_slab(77, &[site], 3, 2.0, 16.0);
            pooled.extend(slab.arrivals.iter().map(|t| (t - slab.t0) / slab.width));
            site += 1;
        }
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = pooled.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &u) in pooled.iter().enumerate() {
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d = d.max((u - lo).abs()).max((hi - u).abs());
        }
        // Kolmogorov critical value at alpha = 0.001.
        let critical = (-(0.0005f64).ln() / (2.0 * n)).sqrt();
        assert!(d < critical, "KS statistic {d} exceeds {critical}");
    }

    #[test]
    fn determinism_over_random_keys() {
        let mut h = 5u64;
        for _ in 0..1000 {
            h = splitmix64(h);
            let seed = h;
            let site = [(h >> 8) as i64 % 100 - 50, (h >> 32) as i64 % 100 - 50];
            let slab = (h % 64) as i64 - 32;
            let a = generate_slab(seed, &site, slab, 0.4, 16.0);
            let b = generate_slab(seed, &site, slab, 0.4, 16.0);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_window_stream_is_empty() {
        let dom = Domain::torus(1, 2);
        let events: Vec<_> = merged_event_stream(&dom, 1, 0.5, (4.0, 4.0))
            .unwrap()
            .collect();
        assert!(events.is_empty());
    }

    #[test]
    fn zero_lambda_stream_has_only_departures() {
        let dom = Domain::torus(1, 0);
        let events: Vec<_> = merged_event_stream(&dom, 1, 0.0, (0.0, 50.0))
            .unwrap()
            .collect();
        assert!(!events.is_empty());
        assert!(events
            .iter()
            .all(|e| matches!(e.kind, EventKind::Departure { .. })));
    }

    #[test]
    fn stream_is_time_ordered() {
        let dom = Domain::torus(1, 3);
        let events: Vec<_> = merged_event_stream(&dom, 99, 0.8, (-10.0, 30.0))
            .unwrap()
            .collect();
        for w in events.windows(2) {
            assert!(w[0].time <= w[1].time);
        }
        assert!(events.iter().all(|e| e.time >= -10.0 && e.time < 30.0));
    }

    #[test]
    fn disjoint_windows_concatenate_exactly() {
        let dom = Domain::torus(1, 2);
        let first: Vec<_> = merged_event_stream(&dom, 5, 0.6, (0.0, 10.0))
            .unwrap()
            .collect();
        let second: Vec<_> = merged_event_stream(&dom, 5, 0.6, (10.0, 20.0))
            .unwrap()
            .collect();
        let whole: Vec<_> = merged_event_stream(&dom, 5, 0.6, (0.0, 20.0))
            .unwrap()
            .collect();
        let mut glued = first;
        glued.extend(second);
        assert_eq!(glued, whole);
    }

    #[test]
    fn past_window_restriction_is_exact() {
        // The property the backward sampler relies on: the stream over
        // [-2T, 0) restricted to [-T, 0) equals the stream over [-T, 0).
        let dom = Domain::torus(1, 2);
        let t = 48.0;
        let long: Vec<_> = merged_event_stream(&dom, 13, 0.5, (-2.0 * t, 0.0))
            .unwrap()
            .filter(|e| e.time >= -t)
            .collect();
        let short: Vec<_> = merged_event_stream(&dom, 13, 0.5, (-t, 0.0))
            .unwrap()
            .collect();
        assert_eq!(long, short);
    }

    #[test]
    fn masked_stream_suppresses_frozen_arrivals() {
        let dom = Domain::frozen_strip(1, 10, 1).unwrap();
        let events: Vec<_> = merged_event_stream(&dom, 3, 1.0, (0.0, 100.0))
            .unwrap()
            .collect();
        assert!(events.iter().all(|e| match e.kind {
            EventKind::Arrival => dom.arrivals_allowed(e.site),
            EventKind::Departure { .. } => true,
        }));
        let unmasked: Vec<_> = unmasked_event_stream(&dom, 3, 1.0, (0.0, 100.0))
            .unwrap()
            .collect();
        assert!(unmasked.iter().any(|e| match e.kind {
            EventKind::Arrival => !dom.arrivals_allowed(e.site),
            EventKind::Departure { .. } => false,
        }));
    }
}
