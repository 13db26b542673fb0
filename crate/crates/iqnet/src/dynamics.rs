//! Forward simulation of the queue field by thinning.
//!
//! Potential departures arrive at unit rate per site; a potential
//! departure `(t, u)` at site `i` is accepted iff
//! `u <= X_i / sum_j a_j X_{i-j}` evaluated in the pre-event state, with
//! the convention `0/0 = 0`. Because acceptance is the only place the
//! state enters, several processes driven by the same noise can be stepped
//! in lockstep, which is how all the ordering comparisons (ordered initial
//! states, nested kernel truncations, the M/M/1 companion, zero-box versus
//! torus) are simulated.

use std::io::Write;
use std::sync::Arc;

use crate::domain::{Domain, Resolved};
use crate::error::{Error, Result};
use crate::kernel::InterferenceKernel;
use crate::noise::{merged_event_stream, unmasked_event_stream, Event, EventKind};

/// Nonnegative integer queue lengths over a domain at an instant.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueField {
    dom: Arc<Domain>,
    values: Vec<u32>,
    time: f64,
}

impl QueueField {
    /// All-empty field at time `time`.
    pub fn empty(dom: Arc<Domain>, time: f64) -> Self {
        let values = vec![0; dom.site_count()];
        Self { dom, values, time }
    }

    /// Field with explicit values. Frozen sites must hold zero.
    pub fn new(dom: Arc<Domain>, values: Vec<u32>, time: f64) -> Self {
        assert_eq!(values.len(), dom.site_count(), "value vector length mismatch");
        for (site, &v) in values.iter().enumerate() {
            assert!(
                !dom.is_frozen(site) || v == 0,
                "frozen site {site} must hold zero"
            );
        }
        Self { dom, values, time }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn value(&self, site: usize) -> u32 {
        self.values[site]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    /// Coordinate-wise `self <= other`.
    pub fn dominated_by(&self, other: &QueueField) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| a <= b)
    }
}

/// Precomputed interference neighborhoods for one `(domain, kernel)` pair.
///
/// Row `i` lists `(neighbor index, weight)` for every kernel offset whose
/// resolution lands inside the domain; zero-box exits are simply omitted
/// since they contribute nothing to the denominator.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    row_start: Vec<u32>,
    entries: Vec<(u32, f64)>,
}

impl NeighborTable {
    pub fn build(dom: &Domain, kernel: &InterferenceKernel) -> Self {
        assert_eq!(dom.dim(), kernel.dim(), "kernel and domain dimension mismatch");
        let sites = dom.site_count();
        let mut row_start = Vec::with_capacity(sites + 1);
        let mut entries = Vec::with_capacity(sites * kernel.entries().len());
        row_start.push(0u32);
        for site in dom.sites() {
            for (offset, w) in kernel.entries() {
                match dom.resolve(site, offset) {
                    Resolved::Site(nb) => entries.push((nb as u32, *w)),
                    Resolved::Zero => {}
                }
            }
            row_start.push(entries.len() as u32);
        }
        Self { row_start, entries }
    }

    #[inline]
    fn denominator(&self, values: &[u32], site: usize) -> f64 {
        let lo = self.row_start[site] as usize;
        let hi = self.row_start[site + 1] as usize;
        self.entries[lo..hi]
            .iter()
            .map(|&(nb, w)| w * values[nb as usize] as f64)
            .sum()
    }

    /// `X_i / sum_j a_j X_{i-j}` with `0/0 = 0`; always in `[0, 1]`.
    #[inline]
    pub fn rate(&self, values: &[u32], site: usize) -> f64 {
        let x = values[site] as f64;
        if x == 0.0 {
            return 0.0;
        }
        let denom = self.denominator(values, site);
        debug_assert!(denom >= x, "a_0 = 1 makes the denominator at least X_i");
        x / denom
    }
}

/// Instantaneous departure rate at `site`.
///
/// Builds the neighborhood on the fly; simulation loops use a prebuilt
/// [`NeighborTable`] instead.
pub fn service_rate(field: &QueueField, kernel: &InterferenceKernel, site: usize) -> f64 {
    let x = field.values[site] as f64;
    if x == 0.0 {
        return 0.0;
    }
    let mut denom = 0.0;
    for (offset, w) in kernel.entries() {
        match field.dom.resolve(site, offset) {
            Resolved::Site(nb) => denom += w * field.values[nb] as f64,
            Resolved::Zero => {}
        }
    }
    x / denom
}

/// Applies one driving event; returns whether the state changed.
///
/// Arrivals at masked (frozen) sites leave the field unchanged. Potential
/// departures decrement iff the mark does not exceed the service rate;
/// empty sites never decrement since their rate is zero and marks are
/// strictly positive.
pub fn apply_event(field: &mut QueueField, table: &NeighborTable, event: &Event) -> bool {
    debug_assert!(event.time >= field.time, "events must not move time backwards");
    field.time = event.time;
    match event.kind {
        EventKind::Arrival => {
            if field.dom.arrivals_allowed(event.site) {
                field.values[event.site] += 1;
                true
            } else {
                false
            }
        }
        EventKind::Departure { mark } => {
            let r = table.rate(&field.values, event.site);
            debug_assert!((0.0..=1.0).contains(&r), "service rate out of [0, 1]");
            if mark <= r {
                field.values[event.site] -= 1;
                true
            } else {
                false
            }
        }
    }
}

/// Snapshots of one run at requested sample times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<QueueField>,
    /// Total driving events consumed (including rejected departures).
    pub event_count: u64,
}

impl Trajectory {
    /// Final snapshot, if any sample time was requested.
    pub fn last(&self) -> Option<&QueueField> {
        self.snapshots.last()
    }

    /// Long-format CSV: `time, x0, .., x{d-1}, value` per site per snapshot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = match self.snapshots.first() {
            Some(f) => f.domain().dim(),
            None => return Ok(()),
        };
        write!(w, "time")?;
        for axis in 0..dim {
            write!(w, ",x{axis}")?;
        }
        writeln!(w, ",value")?;
        for snap in &self.snapshots {
            for site in snap.domain().sites() {
                write!(w, "{}", snap.time())?;
                for c in snap.domain().coords_of(site) {
                    write!(w, ",{c}")?;
                }
                writeln!(w, ",{}", snap.value(site))?;
            }
        }
        Ok(())
    }
}

fn check_window_and_samples(window: (f64, f64), sample_times: &[f64]) -> Result<()> {
    let (start, end) = window;
    if !(end > start) {
        return Err(Error::InvalidWindow { start, end });
    }
    for w in sample_times.windows(2) {
        assert!(w[0] <= w[1], "sample times must be sorted");
    }
    if let (Some(first), Some(last)) = (sample_times.first(), sample_times.last()) {
        assert!(
            *first >= start && *last <= end,
            "sample times must lie within the window"
        );
    }
    Ok(())
}

/// Runs the dynamics over `[window.0, window.1)` from `init`, snapshotting
/// at `sample_times` (sorted, within the closed window). Deterministic in
/// all arguments.
pub fn simulate(
    kernel: &InterferenceKernel,
    lambda: f64,
    init: &QueueField,
    window: (f64, f64),
    seed: u64,
    sample_times: &[f64],
) -> Result<Trajectory> {
    check_window_and_samples(window, sample_times)?;
    let dom = init.domain().clone();
    let table = NeighborTable::build(&dom, kernel);
    let mut field = init.clone();
    field.time = window.0;
    let mut snapshots = Vec::with_capacity(sample_times.len());
    let mut pending = sample_times.iter().copied().peekable();
    let mut event_count = 0u64;
    for event in merged_event_stream(&dom, seed, lambda, window)? {
        while pending.peek().is_some_and(|&t| t < event.time) {
            let t = pending.next().unwrap();
            let mut snap = field.clone();
            snap.time = t;
            snapshots.push(snap);
        }
        apply_event(&mut field, &table, &event);
        event_count += 1;
    }
    for t in pending {
        let mut snap = field.clone();
        snap.time = t;
        snapshots.push(snap);
    }
    Ok(Trajectory { snapshots, event_count })
}

/// One process in a synchronously coupled run.
#[derive(Debug, Clone)]
pub struct CoupledVariant {
    pub init: QueueField,
    pub kernel: InterferenceKernel,
}

/// Steps every variant through the identical driving noise.
///
/// All variants must share the dimension and half-width (hence the site
/// set); boundary semantics and kernels may differ, which is exactly what
/// the ordering comparisons need. Arrival masks are applied per variant.
pub fn couple_simulate(
    variants: &[CoupledVariant],
    lambda: f64,
    window: (f64, f64),
    seed: u64,
    sample_times: &[f64],
) -> Result<Vec<Trajectory>> {
    couple_simulate_observed(variants, lambda, window, seed, sample_times, |_, _| {})
}

/// [`couple_simulate`] with a per-event observer called after each event
/// has been applied to every variant; used for pathwise checks.
pub fn couple_simulate_observed(
    variants: &[CoupledVariant],
    lambda: f64,
    window: (f64, f64),
    seed: u64,
    sample_times: &[f64],
    mut on_event: impl FnMut(&Event, &[QueueField]),
) -> Result<Vec<Trajectory>> {
    check_window_and_samples(window, sample_times)?;
    let first = variants.first().ok_or(Error::ShapeMismatch)?;
    let dim = first.init.domain().dim();
    let half = first.init.domain().half_width();
    for v in variants {
        if v.init.domain().dim() != dim
            || v.init.domain().half_width() != half
            || v.kernel.dim() != dim
        {
            return Err(Error::ShapeMismatch);
        }
    }
    let tables: Vec<NeighborTable> = variants
        .iter()
        .map(|v| NeighborTable::build(v.init.domain(), &v.kernel))
        .collect();
    let mut fields: Vec<QueueField> = variants
        .iter()
        .map(|v| {
            let mut f = v.init.clone();
            f.time = window.0;
            f
        })
        .collect();
    let mut trajectories: Vec<Trajectory> = variants
        .iter()
        .map(|_| Trajectory { snapshots: Vec::new(), event_count: 0 })
        .collect();
    let mut pending = sample_times.iter().copied().peekable();
    // The stream comes from the first variant's geometry with masks off;
    // noise is keyed by coordinates, so every variant sees the same atoms.
    let stream = unmasked_event_stream(first.init.domain(), seed, lambda, window)?;
    for event in stream {
        while pending.peek().is_some_and(|&t| t < event.time) {
            let t = pending.next().unwrap();
            for (traj, field) in trajectories.iter_mut().zip(&fields) {
                let mut snap = field.clone();
                snap.time = t;
                traj.snapshots.push(snap);
            }
        }
        for (field, table) in fields.iter_mut().zip(&tables) {
            apply_event(field, table, &event);
        }
        for traj in &mut trajectories {
            traj.event_count += 1;
        }
        on_event(&event, &fields);
    }
    for t in pending {
        for (traj, field) in trajectories.iter_mut().zip(&fields) {
            let mut snap = field.clone();
            snap.time = t;
            traj.snapshots.push(snap);
        }
    }
    Ok(trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn torus3() -> Arc<Domain> {
        Arc::new(Domain::torus(1, 1))
    }

    fn nn_kernel() -> InterferenceKernel {
        InterferenceKernel::symmetric_1d(&[0.5]).unwrap()
    }

    #[test]
    fn service_rate_zero_on_empty_field() {
        let dom = torus3();
        let field = QueueField::empty(dom, 0.0);
        let k = nn_kernel();
        for site in field.domain().sites() {
            assert_eq!(service_rate(&field, &k, site), 0.0);
        }
    }

    #[test]
    fn service_rate_isolated_queue_is_one() {
        let dom = torus3();
        let field = QueueField::new(dom.clone(), vec![5, 0, 0], 0.0);
        let k = nn_kernel();
        let site = dom.index_of(&[-1]).unwrap();
        assert_eq!(field.value(site), 5);
        assert_relative_eq!(service_rate(&field, &k, site), 1.0);
    }

    #[test]
    fn service_rate_hand_computed() {
        // X = (2, 1, 1) on the 3-site torus with a = {1, .5, .5}:
        // rates (2/3, 2/5, 2/5).
        let dom = torus3();
        let field = QueueField::new(dom.clone(), vec![2, 1, 1], 0.0);
        let k = nn_kernel();
        let rates: Vec<f64> = dom.sites().map(|s| service_rate(&field, &k, s)).collect();
        assert_relative_eq!(rates[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(rates[1], 0.4, max_relative = 1e-12);
        assert_relative_eq!(rates[2], 0.4, max_relative = 1e-12);
    }

    #[test]
    fn table_rate_matches_service_rate() {
        let dom = Arc::new(Domain::zero_box(1, 2));
        let field = QueueField::new(dom.clone(), vec![3, 0, 2, 1, 4], 0.0);
        let k = nn_kernel();
        let table = NeighborTable::build(&dom, &k);
        for site in dom.sites() {
            assert_relative_eq!(
                table.rate(field.values(), site),
                service_rate(&field, &k, site)
            );
        }
    }

    #[test]
    fn arrival_at_frozen_site_is_ignored() {
        let dom = Arc::new(Domain::frozen_strip(1, 6, 1).unwrap());
        let frozen = dom.sites().find(|&s| dom.is_frozen(s)).unwrap();
        let mut field = QueueField::empty(dom.clone(), 0.0);
        let table = NeighborTable::build(&dom, &nn_kernel());
        let changed = apply_event(
            &mut field,
            &table,
            &Event { time: 1.0, site: frozen, kind: EventKind::Arrival },
        );
        assert!(!changed);
        assert_eq!(field.value(frozen), 0);
    }

    #[test]
    fn departure_mark_thinning() {
        let dom = torus3();
        let table = NeighborTable::build(&dom, &nn_kernel());
        let mut field = QueueField::new(dom.clone(), vec![2, 1, 1], 0.0);
        // Rate at the center site is 2/3: mark 0.9 rejects, mark 0.5 accepts.
        let site = dom.index_of(&[0]).unwrap();
        assert_eq!(field.value(site), 1);
        let center_rate = table.rate(field.values(), site);
        assert_relative_eq!(center_rate, 0.4);
        let site0 = dom.index_of(&[-1]).unwrap();
        assert!(!apply_event(
            &mut field,
            &table,
            &Event { time: 0.5, site: site0, kind: EventKind::Departure { mark: 0.9 } },
        ));
        assert_eq!(field.value(site0), 2);
        assert!(apply_event(
            &mut field,
            &table,
            &Event { time: 0.6, site: site0, kind: EventKind::Departure { mark: 0.5 } },
        ));
        assert_eq!(field.value(site0), 1);
    }

    #[test]
    fn zero_lambda_from_empty_stays_empty() {
        let dom = torus3();
        let init = QueueField::empty(dom, 0.0);
        let traj = simulate(&nn_kernel(), 0.0, &init, (0.0, 200.0), 7, &[50.0, 200.0]).unwrap();
        for snap in &traj.snapshots {
            assert!(snap.values().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let dom = Arc::new(Domain::torus(1, 4));
        let init = QueueField::empty(dom, 0.0);
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 10.0).collect();
        let a = simulate(&nn_kernel(), 0.3, &init, (0.0, 200.0), 11, &times).unwrap();
        let b = simulate(&nn_kernel(), 0.3, &init, (0.0, 200.0), 11, &times).unwrap();
        assert_eq!(a.event_count, b.event_count);
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn single_site_long_run_mean_near_mm1() {
        // Identity kernel on one site is an M/M/1 queue; the long-run mean
        // approaches lambda / (1 - lambda) = 1 at lambda = 0.5.
        let dom = Arc::new(Domain::torus(1, 0));
        let init = QueueField::empty(dom, 0.0);
        let k = InterferenceKernel::identity(1);
        let horizon = 60_000.0;
        let times: Vec<f64> = (2_000..60_000).step_by(2).map(|t| t as f64).collect();
        let traj = simulate(&k, 0.5, &init, (0.0, horizon), 424_242, &times).unwrap();
        let mean = traj
            .snapshots
            .iter()
            .map(|s| s.value(0) as f64)
            .sum::<f64>()
            / traj.snapshots.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn replaying_the_stream_reproduces_snapshots() {
        let dom = Arc::new(Domain::torus(1, 3));
        let init = QueueField::empty(dom.clone(), 0.0);
        let k = nn_kernel();
        let times = [25.0, 50.0, 75.0, 100.0];
        let traj = simulate(&k, 0.4, &init, (0.0, 100.0), 21, &times).unwrap();
        let table = NeighborTable::build(&dom, &k);
        let mut field = init.clone();
        let mut replayed = Vec::new();
        let mut next = 0;
        for event in merged_event_stream(&dom, 21, 0.4, (0.0, 100.0)).unwrap() {
            while next < times.len() && times[next] < event.time {
                replayed.push(field.values().to_vec());
                next += 1;
            }
            apply_event(&mut field, &table, &event);
        }
        while next < times.len() {
            replayed.push(field.values().to_vec());
            next += 1;
        }
        for (snap, values) in traj.snapshots.iter().zip(&replayed) {
            assert_eq!(snap.values(), values.as_slice());
        }
    }

    #[test]
    fn coupled_ordered_inits_stay_ordered() {
        let dom = Arc::new(Domain::torus(1, 3));
        let lower = QueueField::empty(dom.clone(), 0.0);
        let upper = QueueField::new(dom.clone(), vec![1, 3, 0, 2, 1, 0, 4], 0.0);
        let k = nn_kernel();
        let times: Vec<f64> = (1..=40).map(|t| t as f64 * 5.0).collect();
        let trajs = couple_simulate(
            &[
                CoupledVariant { init: lower, kernel: k.clone() },
                CoupledVariant { init: upper, kernel: k },
            ],
            0.3,
            (0.0, 200.0),
            5,
            &times,
        )
        .unwrap();
        for (lo, hi) in trajs[0].snapshots.iter().zip(&trajs[1].snapshots) {
            assert!(lo.dominated_by(hi));
        }
    }

    #[test]
    fn coupled_truncations_stay_ordered() {
        let dom = Arc::new(Domain::torus(1, 4));
        let init = QueueField::empty(dom, 0.0);
        let k = InterferenceKernel::symmetric_1d(&[0.5, 0.25]).unwrap();
        let times: Vec<f64> = (1..=20).map(|t| t as f64 * 10.0).collect();
        let trajs = couple_simulate(
            &[
                CoupledVariant { init: init.clone(), kernel: k.truncate(0) },
                CoupledVariant { init: init.clone(), kernel: k.truncate(1) },
                CoupledVariant { init: init.clone(), kernel: k },
            ],
            0.35,
            (0.0, 200.0),
            17,
            &times,
        )
        .unwrap();
        for i in 0..times.len() {
            assert!(trajs[0].snapshots[i].dominated_by(&trajs[1].snapshots[i]));
            assert!(trajs[1].snapshots[i].dominated_by(&trajs[2].snapshots[i]));
        }
    }

    #[test]
    fn zero_box_dominated_by_torus() {
        let k = nn_kernel();
        let torus = QueueField::empty(Arc::new(Domain::torus(1, 4)), 0.0);
        let boxed = QueueField::empty(Arc::new(Domain::zero_box(1, 4)), 0.0);
        let times: Vec<f64> = (1..=20).map(|t| t as f64 * 10.0).collect();
        let trajs = couple_simulate(
            &[
                CoupledVariant { init: boxed, kernel: k.clone() },
                CoupledVariant { init: torus, kernel: k },
            ],
            0.35,
            (0.0, 200.0),
            23,
            &times,
        )
        .unwrap();
        for (z, y) in trajs[0].snapshots.iter().zip(&trajs[1].snapshots) {
            assert!(z.dominated_by(y));
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let a = QueueField::empty(Arc::new(Domain::torus(1, 2)), 0.0);
        let b = QueueField::empty(Arc::new(Domain::torus(1, 3)), 0.0);
        let k = nn_kernel();
        let got = couple_simulate(
            &[
                CoupledVariant { init: a, kernel: k.clone() },
                CoupledVariant { init: b, kernel: k },
            ],
            0.2,
            (0.0, 10.0),
            1,
            &[],
        );
        assert!(matches!(got, Err(Error::ShapeMismatch)));
    }

    #[test]
    fn invalid_window_rejected() {
        let dom = torus3();
        let init = QueueField::empty(dom, 0.0);
        let got = simulate(&nn_kernel(), 0.2, &init, (5.0, 5.0), 1, &[]);
        assert!(matches!(got, Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn csv_export_shape() {
        let dom = torus3();
        let init = QueueField::empty(dom, 0.0);
        let traj = simulate(&nn_kernel(), 0.2, &init, (0.0, 32.0), 3, &[16.0, 32.0]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,x0,value"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}
