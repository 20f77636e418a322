//! Ratio-test nearest-neighbour matching with a Laplacian-sign pre-filter.

use serde::Serialize;

use crate::features::Descriptor;

pub const DEFAULT_RATIO: f64 = 0.8;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// A sensed-to-reference correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    /// Index into the sensed descriptor list.
    pub sensed: usize,
    /// Index into the reference descriptor list.
    pub reference: usize,
    pub sensed_pos: Point,
    pub reference_pos: Point,
    pub distance: f64,
    /// Closest over second-closest distance.
    pub ratio: f64,
}

impl Match {
    /// Displacement `reference - sensed`.
    pub fn displacement(&self) -> (f64, f64) {
        (
            self.reference_pos.x - self.sensed_pos.x,
            self.reference_pos.y - self.sensed_pos.y,
        )
    }
}

/// Squared distance, abandoned once it reaches `bound`.
#[inline]
fn squared_distance_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(4).zip(b.chunks(4)) {
        for (x, y) in ca.iter().zip(cb) {
            let d = x - y;
            acc += d * d;
        }
        if acc >= bound {
            return acc;
        }
    }
    acc
}

/// Matches each sensed descriptor against reference descriptors of equal
/// Laplacian sign. A pair is kept when closest / second-closest distance is at
/// most `ratio_threshold`; descriptors with fewer than two candidates yield
/// nothing. Equal distances resolve to the lower reference index. The result
/// is sorted by ascending distance.
pub fn match_descriptors(
    sensed: &[Descriptor],
    reference: &[Descriptor],
    ratio_threshold: f64,
) -> Vec<Match> {
    let mut matches = Vec::new();
    for (si, s) in sensed.iter().enumerate() {
        let sign = s.keypoint.laplacian_sign;
        let (mut best, mut best_idx, mut second) = (f64::INFINITY, usize::MAX, f64::INFINITY);
        let mut candidates = 0usize;
        for (ri, r) in reference.iter().enumerate() {
            if r.keypoint.laplacian_sign != sign {
                continue;
            }
            candidates += 1;
            let d = squared_distance_bounded(&s.values, &r.values, second);
            if d < best {
                second = best;
                best = d;
                best_idx = ri;
            } else if d < second {
                second = d;
            }
        }
        if candidates < 2 {
            continue;
        }
        let (d1, d2) = (best.sqrt(), second.sqrt());
        let ratio = if d2 > 0.0 { d1 / d2 } else { 1.0 };
        if ratio <= ratio_threshold {
            let r = &reference[best_idx];
            matches.push(Match {
                sensed: si,
                reference: best_idx,
                sensed_pos: Point {
                    x: s.keypoint.x,
                    y: s.keypoint.y,
                },
                reference_pos: Point {
                    x: r.keypoint.x,
                    y: r.keypoint.y,
                },
                distance: d1,
                ratio,
            });
        }
    }
    sort_matches(&mut matches);
    matches
}

fn sort_matches(matches: &mut [Match]) {
    matches.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.sensed.cmp(&b.sensed))
            .then(a.reference.cmp(&b.reference))
    });
}

/// The `k` smallest-distance matches (all of them if fewer exist).
pub fn top_k(matches: &[Match], k: usize) -> Vec<Match> {
    let mut sorted = matches.to_vec();
    sort_matches(&mut sorted);
    sorted.truncate(k);
    sorted
}

fn exact_squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Same result as `top_k(&match_descriptors(sensed, reference, ratio), k)`,
/// without resolving descriptors that cannot reach the top `k`.
///
/// Once `k` matches are held, only candidates closer than the current k-th
/// distance `T` matter, and a ratio test against such a candidate can only
/// fail through a neighbour closer than `T / ratio`; partial distances are
/// abandoned beyond that radius. An accepted descriptor whose second
/// neighbour was never resolved gets it recomputed exactly.
pub fn match_top_k(sensed: &[Descriptor], reference: &[Descriptor], ratio_threshold: f64, k: usize) -> Vec<Match> {
    let mut kept: Vec<Match> = Vec::with_capacity(k + 1);
    if k == 0 {
        return kept;
    }
    for (si, s) in sensed.iter().enumerate() {
        let sign = s.keypoint.laplacian_sign;
        let limit = if kept.len() == k {
            kept[k - 1].distance
        } else {
            f64::INFINITY
        };
        // slack keeps rounding in the squared-distance sums on the safe side
        let cap = (limit / ratio_threshold).powi(2) * (1.0 + 1e-9) + 1e-300;
        let (mut best, mut best_idx, mut second) = (f64::INFINITY, usize::MAX, f64::INFINITY);
        let mut candidates = 0usize;
        for (ri, r) in reference.iter().enumerate() {
            if r.keypoint.laplacian_sign != sign {
                continue;
            }
            candidates += 1;
            let d = squared_distance_bounded(&s.values, &r.values, second.min(cap));
            if d >= cap {
                continue;
            }
            if d < best {
                second = best;
                best = d;
                best_idx = ri;
            } else if d < second {
                second = d;
            }
        }
        if candidates < 2 || best_idx == usize::MAX {
            continue;
        }
        let d1 = best.sqrt();
        if d1 >= limit {
            continue;
        }
        if second == f64::INFINITY {
            second = reference
                .iter()
                .enumerate()
                .filter(|(ri, r)| *ri != best_idx && r.keypoint.laplacian_sign == sign)
                .map(|(_, r)| exact_squared(&s.values, &r.values))
                .fold(f64::INFINITY, f64::min);
        }
        let d2 = second.sqrt();
        let ratio = if d2 > 0.0 { d1 / d2 } else { 1.0 };
        if ratio > ratio_threshold {
            continue;
        }
        let r = &reference[best_idx];
        let m = Match {
            sensed: si,
            reference: best_idx,
            sensed_pos: Point {
                x: s.keypoint.x,
                y: s.keypoint.y,
            },
            reference_pos: Point {
                x: r.keypoint.x,
                y: r.keypoint.y,
            },
            distance: d1,
            ratio,
        };
        // later sensed indices lose distance ties, so insert after equals
        let at = kept.partition_point(|x| x.distance <= m.distance);
        kept.insert(at, m);
        kept.truncate(k);
    }
    kept
}

/// Inlier statistics of a voted match set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchStats {
    pub a_num: usize,
    pub v_num: usize,
    pub accuracy: f64,
}

impl MatchStats {
    pub fn new(a_num: usize, v_num: usize) -> Self {
        let accuracy = if a_num == 0 {
            0.0
        } else {
            v_num as f64 / a_num as f64
        };
        Self {
            a_num,
            v_num,
            accuracy,
        }
    }
}
