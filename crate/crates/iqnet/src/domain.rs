//! Finite lattice domains with the three boundary semantics used by the
//! simulator: periodic wrap, zero-padded box, and a torus with frozen
//! separator strips.
//!
//! Sites are the integer box `B_n = [-n, n]^d`, addressed either by
//! coordinates or by a flat index in mixed-radix order. Neighbor lookups
//! go through [`Domain::resolve`], which encodes the boundary rule: wrap,
//! read-as-zero, or wrap-with-frozen-sites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary semantics for a finite domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Periodic wrap: neighbors are taken modulo the box.
    TorusWrap,
    /// Sites outside the box read as zero in interference sums.
    ZeroBox,
    /// Periodic wrap plus frozen separator strips along the first axis.
    ///
    /// Frozen sites receive no arrivals and hold queue length zero for all
    /// time. Two strips are frozen: the band centered halfway between the
    /// origin and its antipode, and the band's mirror image on the far arc.
    /// Together they cut the torus into two disjoint, reflection-isomorphic
    /// segments, one containing the origin and one containing `n e_1`, so
    /// observables in the two segments are exactly independent and
    /// identically distributed.
    FrozenStrip,
}

/// Outcome of resolving `site - offset` under a boundary rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolved {
    /// A site inside the domain (flat index).
    Site(usize),
    /// Outside a zero-padded box: contributes zero to interference sums.
    Zero,
}

/// A finite site set `B_n = [-n, n]^d` with boundary semantics and an
/// arrival mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    dim: usize,
    half_width: i64,
    boundary: Boundary,
    strip_half_width: i64,
    frozen: Vec<bool>,
    frozen_count: usize,
}

impl Domain {
    /// Periodic domain on `[-n, n]^d`.
    pub fn torus(dim: usize, half_width: i64) -> Self {
        Self::plain(dim, half_width, Boundary::TorusWrap)
    }

    /// Zero-padded box on `[-n, n]^d`: the exterior reads as zero.
    pub fn zero_box(dim: usize, half_width: i64) -> Self {
        Self::plain(dim, half_width, Boundary::ZeroBox)
    }

    fn plain(dim: usize, half_width: i64, boundary: Boundary) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        assert!(half_width >= 0, "half-width must be nonnegative");
        let count = (2 * half_width + 1).pow(dim as u32) as usize;
        Self {
            dim,
            half_width,
            boundary,
            strip_half_width: 0,
            frozen: vec![false; count],
            frozen_count: 0,
        }
    }

    /// Torus with two frozen separator strips of half-width `strip` along
    /// the first axis.
    ///
    /// In torus coordinates `u = z_1 mod (2n+1)` taken in `[0, 2n]`, the
    /// frozen bands are `[floor(n/2) - strip, ceil(n/2) + strip]` and its
    /// half-circumference translate `[floor((3n+1)/2) - strip,
    /// ceil((3n+1)/2) + strip]`. The complement splits into two equal-length
    /// segments centered on the origin and on `n e_1`.
    pub fn frozen_strip(dim: usize, half_width: i64, strip: i64) -> Result<Self> {
        assert!(strip >= 0, "strip half-width must be nonnegative");
        let n = half_width;
        if n < 2 * strip + 2 {
            return Err(Error::DomainTooSmall {
                n,
                needed: 2 * strip + 2,
                strip,
                window: 0,
            });
        }
        let mut dom = Self::plain(dim, n, Boundary::FrozenStrip);
        dom.strip_half_width = strip;
        let side = 2 * n + 1;
        let (lo1, hi1) = (n / 2 - strip, (n + 1) / 2 + strip);
        let (lo2, hi2) = ((3 * n + 1) / 2 - strip, (3 * n + 2) / 2 + strip);
        for idx in 0..dom.site_count() {
            let z1 = dom.coords_of(idx)[0];
            let u = z1.rem_euclid(side);
            if (lo1..=hi1).contains(&u) || (lo2..=hi2).contains(&u) {
                dom.frozen[idx] = true;
            }
        }
        dom.frozen_count = dom.frozen.iter().filter(|f| **f).count();
        Ok(dom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `n` of `B_n = [-n, n]^d`.
    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    /// Number of sites per axis, `2n + 1`.
    pub fn side(&self) -> i64 {
        2 * self.half_width + 1
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Total number of sites, `(2n + 1)^d`.
    pub fn site_count(&self) -> usize {
        self.frozen.len()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen_count
    }

    /// Half-width of the frozen strips (zero unless `FrozenStrip`).
    pub fn strip_half_width(&self) -> i64 {
        self.strip_half_width
    }

    pub fn is_frozen(&self, site: usize) -> bool {
        self.frozen[site]
    }

    /// Arrival mask: false exactly on frozen sites.
    pub fn arrivals_allowed(&self, site: usize) -> bool {
        !self.frozen[site]
    }

    /// Flat index of a coordinate vector, if inside the box.
    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        if coords.len() != self.dim {
            return None;
        }
        let side = self.side();
        let mut idx: i64 = 0;
        for &c in coords {
            if c.abs() > self.half_width {
                return None;
            }
            idx = idx * side + (c + self.half_width);
        }
        Some(idx as usize)
    }

    /// Coordinates of a flat index.
    pub fn coords_of(&self, site: usize) -> Vec<i64> {
        debug_assert!(site < self.site_count());
        let side = self.side();
        let mut rest = site as i64;
        let mut coords = vec![0i64; self.dim];
        for slot in coords.iter_mut().rev() {
            *slot = rest % side - self.half_width;
            rest /= side;
        }
        coords
    }

    /// Flat indices of all sites in order.
    pub fn sites(&self) -> std::ops::Range<usize> {
        0..self.site_count()
    }

    /// Resolves the interference neighbor `site - offset`.
    ///
    /// Torus and frozen-strip domains wrap coordinate-wise; a zero box
    /// reports `Zero` whenever the target leaves `B_n`. Frozen sites
    /// resolve like any other site (they hold the value zero by
    /// construction, so they contribute nothing to interference sums).
    pub fn resolve(&self, site: usize, offset: &[i64]) -> Resolved {
        debug_assert_eq!(offset.len(), self.dim);
        let coords = self.coords_of(site);
        let side = self.side();
        let mut idx: i64 = 0;
        match self.boundary {
            Boundary::TorusWrap | Boundary::FrozenStrip => {
                for (c, o) in coords.iter().zip(offset) {
                    let t = (c - o + self.half_width).rem_euclid(side);
                    idx = idx * side + t;
                }
                Resolved::Site(idx as usize)
            }
            Boundary::ZeroBox => {
                for (c, o) in coords.iter().zip(offset) {
                    let t = c - o;
                    if t.abs() > self.half_width {
                        return Resolved::Zero;
                    }
                    idx = idx * side + (t + self.half_width);
                }
                Resolved::Site(idx as usize)
            }
        }
    }

    /// Flat indices of the window `{i : |i - center|_inf <= radius}`,
    /// wrapped on periodic domains, clipped on a zero box. Sorted and
    /// deduplicated.
    pub fn window(&self, center: &[i64], radius: i64) -> Vec<usize> {
        assert_eq!(center.len(), self.dim);
        assert!(radius >= 0);
        let mut out = Vec::new();
        let width = 2 * radius + 1;
        let count = (width as usize).pow(self.dim as u32);
        for flat in 0..count {
            let mut rest = flat as i64;
            let mut target = Vec::with_capacity(self.dim);
            for axis in (0..self.dim).rev() {
                let delta = rest % width - radius;
                rest /= width;
                target.push(center[axis] + delta);
            }
            target.reverse();
            match self.boundary {
                Boundary::TorusWrap | Boundary::FrozenStrip => {
                    let side = self.side();
                    let wrapped: Vec<i64> = target
                        .iter()
                        .map(|c| (c + self.half_width).rem_euclid(side) - self.half_width)
                        .collect();
                    out.push(self.index_of(&wrapped).expect("wrapped site in box"));
                }
                Boundary::ZeroBox => {
                    if let Some(idx) = self.index_of(&target) {
                        out.push(idx);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Rule mapping a half-width `n` to a frozen-strip half-width `L_n`.
///
/// The default rule `L_n = floor(sqrt(floor(n/2)))` grows without bound,
/// is `o(n)`, and keeps both `n -> L_n` and `n -> floor(n/2) - L_n`
/// nondecreasing for `n >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrozenStripSchedule {
    /// `L_n = floor(sqrt(floor(n/2)))`.
    SqrtHalf,
    /// A fixed strip half-width independent of `n`.
    Fixed(i64),
}

impl Default for FrozenStripSchedule {
    fn default() -> Self {
        Self::SqrtHalf
    }
}

impl FrozenStripSchedule {
    /// `L_n` for a given half-width.
    pub fn strip_half_width(&self, n: i64) -> i64 {
        match self {
            Self::SqrtHalf => ((n / 2) as f64).sqrt().floor() as i64,
            Self::Fixed(l) => *l,
        }
    }

    /// Smallest `n` satisfying `n >= 2 L_n + 2 K + 2` for a window radius
    /// `K`, scanning upward from 2.
    pub fn minimal_half_width(&self, window_radius: i64) -> i64 {
        let mut n = 2;
        loop {
            if n >= 2 * self.strip_half_width(n) + 2 * window_radius + 2 {
                return n;
            }
            n += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_count_and_round_trip() {
        let dom = Domain::torus(2, 3);
        assert_eq!(dom.site_count(), 49);
        for idx in dom.sites() {
            let coords = dom.coords_of(idx);
            assert_eq!(dom.index_of(&coords), Some(idx));
        }
    }

    #[test]
    fn torus_resolve_wraps() {
        let dom = Domain::torus(1, 2);
        let site = dom.index_of(&[2]).unwrap();
        // site - offset = 2 - (-1) = 3, wraps to -2
        let got = dom.resolve(site, &[-1]);
        assert_eq!(got, Resolved::Site(dom.index_of(&[-2]).unwrap()));
    }

    #[test]
    fn zero_box_resolve_exits() {
        let dom = Domain::zero_box(1, 2);
        let site = dom.index_of(&[2]).unwrap();
        assert_eq!(dom.resolve(site, &[-1]), Resolved::Zero);
        assert_eq!(
            dom.resolve(site, &[1]),
            Resolved::Site(dom.index_of(&[1]).unwrap())
        );
    }

    #[test]
    fn torus_resolve_wraps_2d() {
        let dom = Domain::torus(2, 3);
        let site = dom.index_of(&[3, 0]).unwrap();
        let got = dom.resolve(site, &[-1, 0]);
        assert_eq!(got, Resolved::Site(dom.index_of(&[-3, 0]).unwrap()));
    }

    #[test]
    fn torus_resolve_is_permutation() {
        let dom = Domain::torus(1, 4);
        for offset in [[-3i64], [1], [4]] {
            let mut seen = vec![false; dom.site_count()];
            for site in dom.sites() {
                match dom.resolve(site, &offset) {
                    Resolved::Site(t) => {
                        assert!(!seen[t]);
                        seen[t] = true;
                    }
                    Resolved::Zero => panic!("torus resolve returned Zero"),
                }
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn frozen_strip_cuts_torus_into_two_equal_segments() {
        for n in [8i64, 9, 64] {
            let strip = FrozenStripSchedule::default().strip_half_width(n);
            let dom = Domain::frozen_strip(1, n, strip).unwrap();
            // Walk the circle and collect maximal unfrozen segments.
            let side = dom.side();
            let mut segments: Vec<Vec<i64>> = Vec::new();
            let mut current: Vec<i64> = Vec::new();
            for u in 0..side {
                let z = (u + dom.half_width()).rem_euclid(side) - dom.half_width();
                let idx = dom.index_of(&[z]).unwrap();
                if dom.is_frozen(idx) {
                    if !current.is_empty() {
                        segments.push(std::mem::take(&mut current));
                    }
                } else {
                    current.push(z);
                }
            }
            if !current.is_empty() {
                // The scan started mid-segment; merge the wrap-around.
                if let Some(first) = segments.first_mut() {
                    let mut merged = std::mem::take(&mut current);
                    merged.extend(first.iter().copied());
                    *first = merged;
                } else {
                    segments.push(current);
                }
            }
            assert_eq!(segments.len(), 2, "n = {n}");
            assert_eq!(segments[0].len(), segments[1].len(), "n = {n}");
            let has_origin = segments.iter().position(|s| s.contains(&0)).unwrap();
            let has_far = segments.iter().position(|s| s.contains(&n)).unwrap();
            assert_ne!(has_origin, has_far, "n = {n}");
            // The reflection z -> n - z maps one segment onto the other
            // with the origin landing on n e_1, so the two windows sit at
            // mirrored positions.
            let pos_origin = segments[has_origin].iter().position(|&z| z == 0).unwrap();
            let pos_far = segments[has_far].iter().position(|&z| z == n).unwrap();
            let len = segments[has_origin].len();
            assert_eq!(pos_origin, len - 1 - pos_far, "n = {n}");
        }
    }

    #[test]
    fn frozen_strip_matches_band_formula_on_near_arc() {
        // On the arc between the two windows the frozen band is exactly
        // floor(n/2) - L <= z_1 <= ceil(n/2) + L.
        let n = 64i64;
        let strip = 5;
        let dom = Domain::frozen_strip(1, n, strip).unwrap();
        for z in 0..=n {
            let idx = dom.index_of(&[z]).unwrap();
            let in_band = (n / 2 - strip..=(n + 1) / 2 + strip).contains(&z);
            assert_eq!(dom.is_frozen(idx), in_band, "z = {z}");
        }
    }

    #[test]
    fn frozen_strip_rejects_tiny_domain() {
        assert!(matches!(
            Domain::frozen_strip(1, 5, 2),
            Err(Error::DomainTooSmall { .. })
        ));
    }

    #[test]
    fn window_wraps_and_clips() {
        let torus = Domain::torus(1, 2);
        let w = torus.window(&[2], 1);
        let expected: Vec<usize> = [[1i64], [2], [-2]]
            .iter()
            .map(|c| torus.index_of(c).unwrap())
            .collect::<Vec<_>>();
        let mut expected = expected;
        expected.sort_unstable();
        assert_eq!(w, expected);

        let boxed = Domain::zero_box(1, 2);
        assert_eq!(boxed.window(&[2], 1).len(), 2);
    }

    #[test]
    fn default_schedule_properties() {
        let sched = FrozenStripSchedule::default();
        assert_eq!(sched.strip_half_width(64), 5);
        let mut prev_l = 0;
        let mut prev_gap = 0;
        for n in 2..=4096 {
            let l = sched.strip_half_width(n);
            let gap = n / 2 - l;
            assert!(l >= prev_l, "L_n nondecreasing at n = {n}");
            assert!(gap >= prev_gap, "floor(n/2) - L_n nondecreasing at n = {n}");
            prev_l = l;
            prev_gap = gap;
        }
        // L_n grows, but sublinearly.
        assert!(sched.strip_half_width(4096) > sched.strip_half_width(64));
        assert!((sched.strip_half_width(4096) as f64) < 4096.0 * 0.05);
    }
}
