//! Estimators over trajectories and replicate samples: moments with
//! standard errors, empirical exponential moments, tail CCDF with an
//! exponent fit, spatial covariance profiles, maxima in growing boxes,
//! and ergodic box averages.
//!
//! Time averages get batch-means standard errors; replicate averages get
//! the spread across replicates. On a torus every functional is pooled
//! over all sites (the dynamics are translation invariant there); on other
//! domains only the center site is used.

use serde::Serialize;

use crate::domain::{Boundary, Resolved};
use crate::dynamics::{QueueField, Trajectory};
use crate::error::{Error, Result};

/// Highest moment order estimated, `E[X^k]` for `k = 1..=K_MAX`.
pub const K_MAX: usize = 5;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValueWithError {
    pub value: f64,
    pub std_err: f64,
}

impl ValueWithError {
    pub fn new(value: f64, std_err: f64) -> Self {
        Self { value, std_err }
    }
}

/// Where samples come from and how to attribute error.
pub enum SampleSource<'a> {
    /// Snapshots of one run: drop everything before `burn_in`, then use
    /// batch means over `batch_count` time batches.
    TimeSeries { trajectory: &'a Trajectory, burn_in: f64, batch_count: usize },
    /// Independent stationary draws (for example backward-sampler output):
    /// error from the replicate spread, no burn-in.
    Replicates(&'a [QueueField]),
}

/// Stationary functionals with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryEstimate {
    pub mean: ValueWithError,
    /// `(k, estimate of E[X^k])` for `k = 1..=K_MAX`.
    pub moments: Vec<(u32, ValueWithError)>,
    /// `(c, estimate of E[exp(c X)])` on the requested grid.
    pub mgf: Vec<(f64, ValueWithError)>,
    /// `P(X >= x)` for `x = 0..=x_max` observed.
    pub ccdf: Vec<ValueWithError>,
    /// Pooled site-samples that went into the estimate.
    pub sample_count: usize,
    pub burn_in: f64,
}

impl StationaryEstimate {
    /// `[1, mu_1, .., mu_k]` vector for the moment-recursion check.
    pub fn moment_vector(&self, k: usize) -> Vec<f64> {
        let mut mu = vec![1.0];
        mu.extend(self.moments.iter().take(k).map(|(_, v)| v.value));
        mu
    }
}

fn pooled_sites(field: &QueueField) -> Vec<usize> {
    let dom = field.domain();
    match dom.boundary() {
        Boundary::TorusWrap => dom.sites().collect(),
        _ => vec![dom.index_of(&vec![0; dom.dim()]).expect("center site")],
    }
}

/// Per-sample pooled histogram of queue lengths.
fn histogram(field: &QueueField, sites: &[usize], hist: &mut Vec<u64>) {
    for &s in sites {
        let v = field.value(s) as usize;
        if v >= hist.len() {
            hist.resize(v + 1, 0);
        }
        hist[v] += 1;
    }
}

fn reduce_time_series(values: &[f64], batch_count: usize) -> ValueWithError {
    let batch_len = values.len() / batch_count;
    let used = batch_len * batch_count;
    let batches: Vec<f64> = (0..batch_count)
        .map(|b| {
            values[b * batch_len..(b + 1) * batch_len].iter().sum::<f64>() / batch_len as f64
        })
        .collect();
    let mean = batches.iter().sum::<f64>() / batch_count as f64;
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>()
        / (batch_count as f64 - 1.0);
    let _ = used;
    ValueWithError::new(mean, (var / batch_count as f64).sqrt())
}

fn reduce_replicates(values: &[f64]) -> ValueWithError {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    ValueWithError::new(mean, (var / n).sqrt())
}

/// Estimates stationary functionals from a run or from replicates.
///
/// Requires at least `10 * batch_count` post-burn-in snapshots for a time
/// series, or two replicates.
pub fn estimate_stationary(
    source: SampleSource<'_>,
    c_grid: &[f64],
) -> Result<StationaryEstimate> {
    let (fields, reduce, burn_in): (Vec<&QueueField>, Box<dyn Fn(&[f64]) -> ValueWithError>, f64) =
        match source {
            SampleSource::TimeSeries { trajectory, burn_in, batch_count } => {
                assert!(batch_count >= 2, "need at least two batches");
                let start = trajectory
                    .snapshots
                    .first()
                    .map(|s| s.time())
                    .unwrap_or(0.0);
                let kept: Vec<&QueueField> = trajectory
                    .snapshots
                    .iter()
                    .filter(|s| s.time() >= start + burn_in)
                    .collect();
                if kept.len() < 10 * batch_count {
                    return Err(Error::InsufficientData {
                        needed: 10 * batch_count,
                        got: kept.len(),
                    });
                }
                (
                    kept,
                    Box::new(move |v: &[f64]| reduce_time_series(v, batch_count)),
                    burn_in,
                )
            }
            SampleSource::Replicates(fields) => {
                if fields.len() < 2 {
                    return Err(Error::InsufficientData { needed: 2, got: fields.len() });
                }
                (
                    fields.iter().collect(),
                    Box::new(|v: &[f64]| reduce_replicates(v)),
                    0.0,
                )
            }
        };

    let sites = pooled_sites(fields[0]);
    let pool = sites.len() as f64;
    let mut hists: Vec<Vec<u64>> = Vec::with_capacity(fields.len());
    let mut x_max = 0usize;
    for f in &fields {
        let mut h = Vec::new();
        histogram(f, &sites, &mut h);
        x_max = x_max.max(h.len().saturating_sub(1));
        hists.push(h);
    }

    let per_sample = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        hists
            .iter()
            .map(|h| {
                h.iter()
                    .enumerate()
                    .map(|(x, &c)| c as f64 * f(x))
                    .sum::<f64>()
                    / pool
            })
            .collect()
    };

    let mean = reduce(&per_sample(&|x| x as f64));
    let moments: Vec<(u32, ValueWithError)> = (1..=K_MAX)
        .map(|k| {
            (
                k as u32,
                reduce(&per_sample(&|x| (x as f64).powi(k as i32))),
            )
        })
        .collect();
    let mgf: Vec<(f64, ValueWithError)> = c_grid
        .iter()
        .map(|&c| (c, reduce(&per_sample(&|x| (c * x as f64).exp()))))
        .collect();
    let ccdf: Vec<ValueWithError> = (0..=x_max)
        .map(|t| reduce(&per_sample(&|x| if x >= t { 1.0 } else { 0.0 })))
        .collect();
    debug_assert!(ccdf[0].value == 1.0);
    debug_assert!(ccdf.windows(2).all(|w| w[0].value >= w[1].value));

    Ok(StationaryEstimate {
        mean,
        moments,
        mgf,
        ccdf,
        sample_count: fields.len() * sites.len(),
        burn_in,
    })
}

/// Least-squares fit of `log CCDF` over the reliable tail range.
#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    /// Fitted decay exponent (positive for an exponentially decaying tail).
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual_rms: f64,
    /// Number of CCDF points used and their `x` range.
    pub points: usize,
    pub x_range: (u32, u32),
    /// Whether the tail looks log-linear (small residual).
    pub log_linear: bool,
    /// Decay exponent `ln(1/lambda)` of the independent M/M/1 lower
    /// witness, when the arrival rate is supplied.
    pub lower_witness_slope: Option<f64>,
}

/// Residual threshold below which a tail is flagged log-linear.
pub const LOG_LINEAR_RESIDUAL: f64 = 0.05;

/// First `x` past the 90th percentile, the default start of the fit range.
pub fn tail_fit_x_min(ccdf: &[ValueWithError]) -> u32 {
    ccdf.iter()
        .position(|v| v.value <= 0.1)
        .unwrap_or(ccdf.len()) as u32
}

/// Fits the tail exponent on points `x >= x_min` whose CCDF value exceeds
/// `10 / sample_count` (at least ten exceedances).
pub fn fit_tail(
    ccdf: &[ValueWithError],
    sample_count: usize,
    x_min: u32,
    lambda: Option<f64>,
) -> Result<TailFit> {
    let floor = 10.0 / sample_count as f64;
    let pts: Vec<(f64, f64)> = ccdf
        .iter()
        .enumerate()
        .skip(x_min as usize)
        .filter(|(_, v)| v.value > floor)
        .map(|(x, v)| (x as f64, v.value.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::TailTooShort { needed: 4, got: pts.len() });
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual_rms = (pts
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(TailFit {
        slope: -slope,
        intercept,
        residual_rms,
        points: pts.len(),
        x_range: (pts[0].0 as u32, pts[pts.len() - 1].0 as u32),
        log_linear: residual_rms < LOG_LINEAR_RESIDUAL,
        lower_witness_slope: lambda.map(|l| (1.0 / l).ln()),
    })
}

/// Translation-pooled covariances along one axis.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceProfile {
    pub axis: usize,
    pub offsets: Vec<i64>,
    /// `Cov(X_0, X_{offset e_axis})` with jackknife standard errors.
    pub covariance: Vec<ValueWithError>,
    /// `E[X_0 X_{offset e_axis}]` with replicate standard errors.
    pub product_moment: Vec<ValueWithError>,
    pub mean: ValueWithError,
}

/// Estimates spatial covariances from independent replicate fields on a
/// torus, pooling every base site.
pub fn spatial_covariance(
    fields: &[QueueField],
    axis: usize,
    offsets: &[i64],
) -> Result<CovarianceProfile> {
    if fields.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: fields.len() });
    }
    let dom = fields[0].domain().clone();
    assert_eq!(dom.boundary(), Boundary::TorusWrap, "covariance pooling needs a torus");
    assert!(axis < dom.dim());
    for o in offsets {
        if 2 * o.abs() >= dom.side() {
            return Err(Error::OffsetTooLarge { offset: *o, side: dom.side() });
        }
    }
    let sites = dom.site_count() as f64;
    let reps = fields.len();
    // Per replicate: pooled mean and pooled lagged products.
    let mut rep_mean = Vec::with_capacity(reps);
    let mut rep_prod = vec![vec![0.0f64; reps]; offsets.len()];
    for (r, f) in fields.iter().enumerate() {
        assert_eq!(f.domain().as_ref(), dom.as_ref(), "replicates share a domain");
        let values = f.values();
        rep_mean.push(values.iter().map(|&v| v as f64).sum::<f64>() / sites);
        for (slot, &o) in offsets.iter().enumerate() {
            let mut shift = vec![0i64; dom.dim()];
            shift[axis] = -o;
            let mut acc = 0.0;
            for site in dom.sites() {
                let partner = match dom.resolve(site, &shift) {
                    Resolved::Site(p) => p,
                    Resolved::Zero => unreachable!("torus never exits"),
                };
                acc += values[site] as f64 * values[partner] as f64;
            }
            rep_prod[slot][r] = acc / sites;
        }
    }
    let mean = reduce_replicates(&rep_mean);
    let product_moment: Vec<ValueWithError> =
        rep_prod.iter().map(|p| reduce_replicates(p)).collect();
    let covariance: Vec<ValueWithError> = rep_prod
        .iter()
        .map(|p| jackknife_covariance(p, &rep_mean))
        .collect();
    Ok(CovarianceProfile {
        axis,
        offsets: offsets.to_vec(),
        covariance,
        product_moment,
        mean,
    })
}

/// Jackknife estimate and error of `mean(p) - mean(m)^2`.
fn jackknife_covariance(p: &[f64], m: &[f64]) -> ValueWithError {
    let r = p.len() as f64;
    let sp: f64 = p.iter().sum();
    let sm: f64 = m.iter().sum();
    let theta = sp / r - (sm / r).powi(2);
    let loo: Vec<f64> = p
        .iter()
        .zip(m)
        .map(|(&pi, &mi)| {
            let mp = (sp - pi) / (r - 1.0);
            let mm = (sm - mi) / (r - 1.0);
            mp - mm * mm
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / r;
    let var = (r - 1.0) / r * loo.iter().map(|t| (t - loo_mean).powi(2)).sum::<f64>();
    ValueWithError::new(theta, var.sqrt())
}

/// Queue values in the window of radius `k` around `center`, in
/// lexicographic offset order (wrapped on the torus).
pub fn window_values(field: &QueueField, center: usize, k: i64) -> Vec<u32> {
    let dom = field.domain();
    let width = 2 * k + 1;
    let count = (width as usize).pow(dom.dim() as u32);
    let mut out = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rest = flat as i64;
        let mut offset = vec![0i64; dom.dim()];
        for axis in (0..dom.dim()).rev() {
            offset[axis] = rest % width - k;
            rest /= width;
        }
        // resolve computes site - offset, so negate to land at center + offset.
        for o in offset.iter_mut() {
            *o = -*o;
        }
        match dom.resolve(center, &offset) {
            Resolved::Site(s) => out.push(field.value(s)),
            Resolved::Zero => out.push(0),
        }
    }
    out
}

/// Translation-pooled estimate of `E[f(W_0) g(W_offset)]` together with
/// the pooled means of `f` and `g`, for bounded window functionals on a
/// torus. Errors come from the replicate spread.
pub fn windowed_product_moment(
    fields: &[QueueField],
    axis: usize,
    offset: i64,
    k: i64,
    f: impl Fn(&[u32]) -> f64,
    g: impl Fn(&[u32]) -> f64,
) -> Result<(ValueWithError, ValueWithError, ValueWithError)> {
    if fields.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: fields.len() });
    }
    let dom = fields[0].domain().clone();
    assert_eq!(dom.boundary(), Boundary::TorusWrap);
    if 2 * offset.abs() >= dom.side() {
        return Err(Error::OffsetTooLarge { offset, side: dom.side() });
    }
    let mut shift = vec![0i64; dom.dim()];
    shift[axis] = -offset;
    let sites = dom.site_count() as f64;
    let mut prod = Vec::with_capacity(fields.len());
    let mut f_mean = Vec::with_capacity(fields.len());
    let mut g_mean = Vec::with_capacity(fields.len());
    for field in fields {
        let mut sp = 0.0;
        let mut sf = 0.0;
        let mut sg = 0.0;
        for site in dom.sites() {
            let partner = match dom.resolve(site, &shift) {
                Resolved::Site(p) => p,
                Resolved::Zero => unreachable!(),
            };
            let fv = f(&window_values(field, site, k));
            let gv = g(&window_values(field, partner, k));
            sp += fv * gv;
            sf += fv;
            sg += gv;
        }
        prod.push(sp / sites);
        f_mean.push(sf / sites);
        g_mean.push(sg / sites);
    }
    Ok((
        reduce_replicates(&prod),
        reduce_replicates(&f_mean),
        reduce_replicates(&g_mean),
    ))
}

/// Maxima over nested centered boxes and their growth against `log N`.
#[derive(Debug, Clone, Serialize)]
pub struct MaxScalingReport {
    pub box_radii: Vec<i64>,
    pub maxima: Vec<u32>,
    /// Least-squares slope of `max` against `ln N`.
    pub slope: f64,
    /// `(radius, max / ln N)` for radii with `ln N > 0`.
    pub ratios: Vec<(i64, f64)>,
    /// Smallest and largest ratio: brackets for the growth constants.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Maxima of one field over the nested boxes `|i|_inf <= N`.
pub fn max_in_boxes(field: &QueueField, radii: &[i64]) -> MaxScalingReport {
    let dom = field.domain();
    let mut radii = radii.to_vec();
    radii.sort_unstable();
    assert!(
        radii.last().map_or(true, |&n| n <= dom.half_width()),
        "largest box must fit in the domain"
    );
    let mut maxima = Vec::with_capacity(radii.len());
    for &n in &radii {
        let m = dom
            .window(&vec![0; dom.dim()], n)
            .into_iter()
            .map(|s| field.value(s))
            .max()
            .unwrap_or(0);
        maxima.push(m);
    }
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&maxima)
        .map(|(&n, &m)| ((n as f64).ln(), m as f64))
        .collect();
    let slope = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|(x, _)| x).sum();
        let sy: f64 = pts.iter().map(|(_, y)| y).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let ratios: Vec<(i64, f64)> = radii
        .iter()
        .zip(&maxima)
        .filter(|(&r, _)| r >= 2)
        .map(|(&r, &m)| (r, m as f64 / (r as f64).ln()))
        .collect();
    let ratio_min = ratios.iter().map(|(_, q)| *q).fold(f64::INFINITY, f64::min);
    let ratio_max = ratios.iter().map(|(_, q)| *q).fold(0.0, f64::max);
    MaxScalingReport { box_radii: radii, maxima, slope, ratios, ratio_min, ratio_max }
}

/// Spatial averages `|F_r|^{-1} sum_{i in F_r} f(field, i)` over nested
/// centered boxes.
pub fn ergodic_average(
    field: &QueueField,
    radii: &[i64],
    f: impl Fn(&QueueField, usize) -> f64,
) -> Vec<(i64, f64)> {
    let dom = field.domain();
    radii
        .iter()
        .map(|&r| {
            let sites = dom.window(&vec![0; dom.dim()], r);
            let avg = sites.iter().map(|&s| f(field, s)).sum::<f64>() / sites.len() as f64;
            (r, avg)
        })
        .collect()
}

/// Mean and batch standard error of spatially ordered values.
pub fn spatial_batch_se(values: &[f64], batch_count: usize) -> ValueWithError {
    reduce_time_series(values, batch_count)
}
