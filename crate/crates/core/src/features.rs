//! Scale-space extrema detection and upright SURF description.

use serde::Serialize;

use crate::error::{FuseError, Result};
use crate::raster::IntegralImage;
use crate::scale_space::{filter_step, ScaleSpace, BASE_SIGMA};

/// Default detection threshold on responses of `[0, 1]`-normalized images.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Supported descriptor dimensions, `m * m * 4` for an `m x m` sub-region grid.
pub const DESCRIPTOR_DIMS: [usize; 5] = [16, 36, 64, 100, 144];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyPoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub response: f64,
    pub laplacian_sign: bool,
    pub octave: usize,
    pub layer: usize,
}

/// A strict 3x3x3 maximum before sub-pixel refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extremum {
    pub octave: usize,
    pub layer: usize,
    pub x: usize,
    pub y: usize,
}

/// Half-width of the square a descriptor reads around a keypoint of scale `s`.
pub fn descriptor_radius(scale: f64) -> f64 {
    // 10s sampling window plus the Haar half-size and one pixel of rounding slack
    11.0 * scale + 1.0
}

/// Every detection-layer pixel whose response exceeds `threshold` and strictly
/// exceeds its 26 neighbours in the same octave. The outermost pixel ring is
/// never reported since its neighbourhood is incomplete.
#[allow(clippy::needless_range_loop)] // neighbour offsets index three rows at once
pub fn local_maxima(ss: &ScaleSpace, threshold: f64) -> Vec<Extremum> {
    let (w, h) = ss.dims();
    let mut found = Vec::new();
    if w < 3 || h < 3 {
        return found;
    }
    let cfg = ss.config();
    for o in 1..=cfg.octaves {
        for j in 1..=cfg.layers {
            let below = &ss.layer(o, j - 1).response;
            let mid = &ss.layer(o, j).response;
            let above = &ss.layer(o, j + 1).response;
            for y in 1..h - 1 {
                let row = mid.row(y);
                for x in 1..w - 1 {
                    let v = row[x];
                    if v <= threshold {
                        continue;
                    }
                    let mut is_max = true;
                    'scan: for (grid, skip_center) in [(mid, true), (below, false), (above, false)] {
                        for yy in y - 1..=y + 1 {
                            let r = grid.row(yy);
                            for xx in x - 1..=x + 1 {
                                if skip_center && xx == x && yy == y {
                                    continue;
                                }
                                if r[xx] >= v {
                                    is_max = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if is_max {
                        found.push(Extremum {
                            octave: o,
                            layer: j,
                            x,
                            y,
                        });
                    }
                }
            }
        }
    }
    found
}

/// Fits a quadratic through the 3x3x3 neighbourhood and returns the offset
/// `(dx, dy, ds)` of its extremum, or `None` when the fit is degenerate.
fn interpolate(ss: &ScaleSpace, e: &Extremum) -> Option<[f64; 3]> {
    let b = &ss.layer(e.octave, e.layer - 1).response;
    let m = &ss.layer(e.octave, e.layer).response;
    let t = &ss.layer(e.octave, e.layer + 1).response;
    let (x, y) = (e.x, e.y);
    let v = m.get(x, y);

    let gx = (m.get(x + 1, y) - m.get(x - 1, y)) / 2.0;
    let gy = (m.get(x, y + 1) - m.get(x, y - 1)) / 2.0;
    let gs = (t.get(x, y) - b.get(x, y)) / 2.0;

    let hxx = m.get(x + 1, y) + m.get(x - 1, y) - 2.0 * v;
    let hyy = m.get(x, y + 1) + m.get(x, y - 1) - 2.0 * v;
    let hss = t.get(x, y) + b.get(x, y) - 2.0 * v;
    let hxy = (m.get(x + 1, y + 1) - m.get(x - 1, y + 1) - m.get(x + 1, y - 1)
        + m.get(x - 1, y - 1))
        / 4.0;
    let hxs = (t.get(x + 1, y) - t.get(x - 1, y) - b.get(x + 1, y) + b.get(x - 1, y)) / 4.0;
    let hys = (t.get(x, y + 1) - t.get(x, y - 1) - b.get(x, y + 1) + b.get(x, y - 1)) / 4.0;

    let hess = [[hxx, hxy, hxs], [hxy, hyy, hys], [hxs, hys, hss]];
    let det = det3(&hess);
    if det.abs() < f64::MIN_POSITIVE || !det.is_finite() {
        return None;
    }
    // offset = -H^-1 g via Cramer's rule
    let g = [gx, gy, gs];
    let mut offset = [0.0; 3];
    for (col, out) in offset.iter_mut().enumerate() {
        let mut mcol = hess;
        for row in 0..3 {
            mcol[row][col] = g[row];
        }
        *out = -det3(&mcol) / det;
    }
    Some(offset)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Detects keypoints: strict 3x3x3 maxima refined by quadratic interpolation.
///
/// Candidates whose offset exceeds half a sample along any axis are dropped,
/// as are keypoints whose descriptor window would leave the image. The result
/// is sorted by descending response.
pub fn detect(ss: &ScaleSpace, threshold: f64) -> Vec<KeyPoint> {
    let (w, h) = ss.dims();
    let mut keypoints: Vec<KeyPoint> = local_maxima(ss, threshold)
        .into_iter()
        .filter_map(|e| {
            let offset = interpolate(ss, &e)?;
            if offset.iter().any(|d| d.abs() > 0.5) {
                return None;
            }
            let size = ss.config().slot_filter_size(e.octave, e.layer) as f64
                + offset[2] * filter_step(e.octave) as f64;
            let scale = BASE_SIGMA * size / 9.0;
            let kx = e.x as f64 + offset[0];
            let ky = e.y as f64 + offset[1];
            let r = descriptor_radius(scale);
            if kx - r < 0.0 || ky - r < 0.0 || kx + r > (w - 1) as f64 || ky + r > (h - 1) as f64 {
                return None;
            }
            let layer = ss.layer(e.octave, e.layer);
            Some(KeyPoint {
                x: kx,
                y: ky,
                scale,
                response: layer.response.get(e.x, e.y),
                laplacian_sign: layer.sign.get(e.x, e.y),
                octave: e.octave,
                layer: e.layer,
            })
        })
        .collect();
    keypoints.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.octave.cmp(&b.octave))
            .then(a.layer.cmp(&b.layer))
    });
    keypoints
}

/// Upright SURF descriptor bound to the keypoint it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub keypoint: KeyPoint,
    pub values: Vec<f64>,
}

impl Descriptor {
    /// Degenerate windows produce an all-zero vector that must not be matched.
    pub fn is_valid(&self) -> bool {
        self.values.iter().any(|&v| v != 0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Sub-region grid side for a descriptor dimension.
pub fn grid_side(dim: usize) -> Result<usize> {
    match dim {
        16 => Ok(2),
        36 => Ok(3),
        64 => Ok(4),
        100 => Ok(5),
        144 => Ok(6),
        other => Err(FuseError::InvalidConfig(format!(
            "descriptor dimension must be one of {DESCRIPTOR_DIMS:?}, got {other}"
        ))),
    }
}

/// Norm below which a window counts as featureless.
const DEGENERATE_NORM: f64 = 1e-10;

/// Computes the upright descriptor of `kp` from the integral image of the
/// grayscale source.
///
/// The `20s x 20s` window is split into an `m x m` grid; each sub-region takes
/// 5 x 5 samples of Haar responses (`~2s` wide), weighted by a Gaussian of
/// `sigma = 3.3s` about the keypoint, accumulated as
/// `(sum dx, sum dy, sum |dx|, sum |dy|)`. Sample positions are symmetric about
/// the rounded keypoint, so mirroring the image mirrors the descriptor.
pub fn describe(ii: &IntegralImage, kp: &KeyPoint, dim: usize) -> Result<Descriptor> {
    let m = grid_side(dim)?;
    let s = kp.scale;
    let cx = kp.x.round() as i64;
    let cy = kp.y.round() as i64;
    let half = (s.round() as i64).max(1);
    let region = 20.0 / m as f64;
    let spacing = region / 5.0;
    let inv_two_sigma2 = 1.0 / (2.0 * (3.3 * s) * (3.3 * s));

    // sample offsets in units of s, symmetric about zero
    let offsets: Vec<f64> = (0..5 * m).map(|i| -10.0 + (i as f64 + 0.5) * spacing).collect();
    let haar_area = ((2 * half + 1) * half) as f64;

    let steps: Vec<i64> = offsets.iter().map(|o| (o * s).round() as i64).collect();
    let falloff: Vec<f64> = offsets
        .iter()
        .map(|o| (-(o * s) * (o * s) * inv_two_sigma2).exp())
        .collect();
    let inside = cx + steps[0] - half >= 0
        && cy + steps[0] - half >= 0
        && cx + steps[steps.len() - 1] + half < ii.width() as i64
        && cy + steps[steps.len() - 1] + half < ii.height() as i64;
    let sum = |x0: i64, y0: i64, x1: i64, y1: i64| {
        if inside {
            ii.box_sum_unchecked(x0 as usize, y0 as usize, x1 as usize, y1 as usize)
        } else {
            ii.box_sum(x0, y0, x1, y1)
        }
    };

    let mut values = vec![0.0; dim];
    for (sy, &oy) in steps.iter().enumerate() {
        let py = cy + oy;
        for (sx, &ox) in steps.iter().enumerate() {
            let px = cx + ox;
            let weight = falloff[sx] * falloff[sy];
            // centred Haar pair: the pixel column/row itself is excluded
            let dx = sum(px + 1, py - half, px + half + 1, py + half + 1)
                - sum(px - half, py - half, px, py + half + 1);
            let dy = sum(px - half, py + 1, px + half + 1, py + half + 1)
                - sum(px - half, py - half, px + half + 1, py);
            let dx = weight * dx / haar_area;
            let dy = weight * dy / haar_area;
            let cell = (sy / 5) * m + sx / 5;
            let v = &mut values[cell * 4..cell * 4 + 4];
            v[0] += dx;
            v[1] += dy;
            v[2] += dx.abs();
            v[3] += dy.abs();
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(Descriptor {
        keypoint: *kp,
        values,
    })
}

/// Describes every keypoint, dropping degenerate descriptors.
pub fn describe_all(ii: &IntegralImage, keypoints: &[KeyPoint], dim: usize) -> Result<Vec<Descriptor>> {
    grid_side(dim)?;
    let mut out = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let d = describe(ii, kp, dim)?;
        if d.is_valid() {
            out.push(d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{integral, Image};
    use crate::scale_space::{build_scale_space, ScaleSpaceConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_image(size: usize, cx: f64, cy: f64, sigma: f64) -> Image {
        Image::from_fn(size, size, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            0.05 + 0.9 * (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    fn textured(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..w * h / 60)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(1.0..3.0),
                    rng.random_range(-0.4..0.4),
                )
            })
            .collect();
        Image::from_fn(w, h, |x, y| {
            let mut v = 0.5;
            for &(bx, by, s, a) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                if d2 < 16.0 * s * s {
                    v += a * (-d2 / (2.0 * s * s)).exp();
                }
            }
            v.clamp(0.0, 1.0)
        })
    }

    /// Triple-loop 27-neighbour oracle, independent of `local_maxima`.
    fn oracle_maxima(ss: &ScaleSpace, threshold: f64) -> Vec<Extremum> {
        let (w, h) = ss.dims();
        let cfg = ss.config();
        let mut out = Vec::new();
        for o in 1..=cfg.octaves {
            for j in 1..=cfg.layers {
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let v = ss.layer(o, j).response.get(x, y);
                        if v <= threshold {
                            continue;
                        }
                        let mut ok = true;
                        for dj in [-1i64, 0, 1] {
                            for dy in [-1i64, 0, 1] {
                                for dx in [-1i64, 0, 1] {
                                    if dj == 0 && dy == 0 && dx == 0 {
                                        continue;
                                    }
                                    let n = ss
                                        .layer(o, (j as i64 + dj) as usize)
                                        .response
                                        .get((x as i64 + dx) as usize, (y as i64 + dy) as usize);
                                    ok &= v > n;
                                }
                            }
                        }
                        if ok {
                            out.push(Extremum { octave: o, layer: j, x, y });
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = Image::from_fn(128, 128, |_, _| 0.5);
        let ss = build_scale_space(&img, &ScaleSpaceConfig::new(2, 2)).unwrap();
        assert!(detect(&ss, DEFAULT_THRESHOLD).is_empty());
    }

    #[test]
    fn single_blob_gives_one_centred_keypoint() {
        // the smallest detection layer (w = 15) is tuned to blobs of radius ~3
        let img = blob_image(128, 64.0, 64.0, 3.0);
        let ss = build_scale_space(&img, &ScaleSpaceConfig::new(2, 2)).unwrap();
        let kps = detect(&ss, DEFAULT_THRESHOLD);
        assert_eq!(kps.len(), 1, "{kps:?}");
        let kp = kps[0];
        assert!((kp.x - 64.0).abs() <= 1.0 && (kp.y - 64.0).abs() <= 1.0);
        assert!(!kp.laplacian_sign);
    }

    #[test]
    fn maxima_match_oracle_on_random_images() {
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(64, 64, |_, _| rng.random::<f64>());
            let ss = build_scale_space(&img, &ScaleSpaceConfig::new(2, 2)).unwrap();
            let mut fast = local_maxima(&ss, 0.0);
            let mut slow = oracle_maxima(&ss, 0.0);
            fast.sort();
            slow.sort();
            assert!(!fast.is_empty());
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn detected_keypoints_are_strict_maxima_and_sorted() {
        let img = textured(5, 160, 160);
        let ss = build_scale_space(&img, &ScaleSpaceConfig::new(2, 2)).unwrap();
        let kps = detect(&ss, DEFAULT_THRESHOLD);
        assert!(!kps.is_empty());
        for pair in kps.windows(2) {
            assert!(pair[0].response >= pair[1].response);
        }
        let maxima = local_maxima(&ss, DEFAULT_THRESHOLD);
        for kp in &kps {
            assert!(kp.response > DEFAULT_THRESHOLD);
            let r = descriptor_radius(kp.scale);
            assert!(kp.x >= r && kp.x <= 159.0 - r);
            // some integer extremum of the same layer lies within half a pixel
            assert!(maxima.iter().any(|e| e.octave == kp.octave
                && e.layer == kp.layer
                && (e.x as f64 - kp.x).abs() <= 0.5
                && (e.y as f64 - kp.y).abs() <= 0.5));
        }
    }

    #[test]
    fn detection_is_translation_equivariant() {
        let base = textured(9, 200, 200);
        let (a, b) = (7usize, 4usize);
        let crop = |ox: usize, oy: usize| Image::from_fn(150, 150, |x, y| base.get(x + ox, y + oy, 0));
        let img0 = crop(a, b);
        let img1 = crop(0, 0);
        let cfg = ScaleSpaceConfig::new(2, 2);
        let k0 = detect(&build_scale_space(&img0, &cfg).unwrap(), DEFAULT_THRESHOLD);
        let k1 = detect(&build_scale_space(&img1, &cfg).unwrap(), DEFAULT_THRESHOLD);
        // keypoints of img0 far from every border reappear shifted by (a, b) in img1
        let mut checked = 0;
        for kp in &k0 {
            let r = descriptor_radius(kp.scale) + 45.0;
            if kp.x < r || kp.y < r || kp.x > 149.0 - r || kp.y > 149.0 - r {
                continue;
            }
            checked += 1;
            assert!(
                k1.iter().any(|q| q.octave == kp.octave
                    && q.layer == kp.layer
                    && (q.x - kp.x - a as f64).abs() < 1e-9
                    && (q.y - kp.y - b as f64).abs() < 1e-9),
                "missing shifted keypoint {kp:?}"
            );
        }
        assert!(checked > 0);
    }

    #[test]
    fn constant_window_gives_invalid_descriptor() {
        let img = Image::from_fn(100, 100, |_, _| 0.5);
        let ii = integral(&img).unwrap();
        let kp = KeyPoint {
            x: 50.0,
            y: 50.0,
            scale: 2.0,
            response: 1.0,
            laplacian_sign: true,
            octave: 1,
            layer: 1,
        };
        let d = describe(&ii, &kp, 64).unwrap();
        assert!(!d.is_valid());
        assert!(describe_all(&ii, &[kp], 64).unwrap().is_empty());
    }

    #[test]
    fn descriptor_dims_and_unit_norm() {
        let img = textured(2, 120, 120);
        let ii = integral(&img).unwrap();
        let kp = KeyPoint {
            x: 60.3,
            y: 59.8,
            scale: 2.4,
            response: 1.0,
            laplacian_sign: false,
            octave: 1,
            layer: 1,
        };
        for dim in DESCRIPTOR_DIMS {
            let d = describe(&ii, &kp, dim).unwrap();
            assert_eq!(d.dim(), dim);
            let n: f64 = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(describe(&ii, &kp, 32).is_err());
    }

    #[test]
    fn mirrored_patch_mirrors_descriptor() {
        let img = textured(11, 101, 101);
        let mirrored = Image::from_fn(101, 101, |x, y| img.get(100 - x, y, 0));
        let (ii, iim) = (integral(&img).unwrap(), integral(&mirrored).unwrap());
        for (scale, dim) in [(2.0, 64), (1.6, 36), (2.4, 100), (1.2, 16)] {
            let kp = KeyPoint {
                x: 47.0,
                y: 52.0,
                scale,
                response: 1.0,
                laplacian_sign: true,
                octave: 1,
                layer: 1,
            };
            let kpm = KeyPoint { x: 100.0 - 47.0, ..kp };
            let d = describe(&ii, &kp, dim).unwrap();
            let dm = describe(&iim, &kpm, dim).unwrap();
            let m = grid_side(dim).unwrap();
            for row in 0..m {
                for col in 0..m {
                    let a = &d.values[(row * m + col) * 4..][..4];
                    let b = &dm.values[(row * m + (m - 1 - col)) * 4..][..4];
                    assert!((a[0] + b[0]).abs() < 1e-9);
                    assert!((a[1] - b[1]).abs() < 1e-9);
                    assert!((a[2] - b[2]).abs() < 1e-9);
                    assert!((a[3] - b[3]).abs() < 1e-9);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn descriptor_invariant_to_affine_intensity(gain in 0.1f64..3.0, bias in -0.5f64..0.5, seed in 0u64..50) {
            let img = textured(seed, 90, 90);
            let other = img.map(|v| gain * v + bias);
            let kp = KeyPoint { x: 45.2, y: 44.7, scale: 2.0, response: 1.0, laplacian_sign: true, octave: 1, layer: 1 };
            let a = describe(&integral(&img).unwrap(), &kp, 64).unwrap();
            let b = describe(&integral(&other).unwrap(), &kp, 64).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn keypoint_count_monotone_in_threshold(seed in 0u64..20, t1 in 0.0f64..2e-3, t2 in 0.0f64..2e-3) {
            let img = textured(seed, 96, 96);
            let ss = build_scale_space(&img, &ScaleSpaceConfig::new(2, 1)).unwrap();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            prop_assert!(detect(&ss, hi).len() <= detect(&ss, lo).len());
        }
    }
}
