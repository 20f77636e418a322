//! Synthetic misaligned multi-focus stacks with known ground truth, and the
//! quality metrics used to score a fusion against them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::pipeline::RunReport;
use crate::raster::{to_grayscale, translate, Grid, Image};

/// Textured test field: a grey background covered with Gaussian blobs of
/// both polarities and radii between 1 and 8 pixels. Values lie in `[0, 1]`.
pub fn procedural_base(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.45; width * height];
    let count = (width * height) / 400 + 1;
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        // log-uniform radius favours small structure without starving the
        // coarse octaves
        let sigma = (rng.random_range(0.0f64..1.0) * 8.0f64.ln()).exp();
        let amp = rng.random_range(0.15..0.45) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let reach = (3.0 * sigma).ceil() as i64;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let x0 = (cx as i64 - reach).max(0);
        let x1 = (cx as i64 + reach).min(width as i64 - 1);
        let y0 = (cy as i64 - reach).max(0);
        let y1 = (cy as i64 + reach).min(height as i64 - 1);
        for y in y0..=y1 {
            let dy = y as f64 - cy;
            let row = &mut acc[y as usize * width..(y as usize + 1) * width];
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                row[x as usize] += amp * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let grid = Grid::from_vec(width, height, acc.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("buffer matches dimensions");
    Image::from_grid(grid)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with replicated borders; `sigma <= 0` is identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = img.dims();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let planes: Vec<Grid<f64>> = (0..img.channels())
        .map(|c| {
            let src = img.plane(c);
            let horiz = Grid::from_fn(w, h, |x, y| {
                let row = src.row(y);
                kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * row[clamp(x as i64 + i as i64 - r, w)])
                    .sum::<f64>()
            });
            Grid::from_fn(w, h, |x, y| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * horiz.get(x, clamp(y as i64 + i as i64 - r, h)))
                    .sum::<f64>()
            })
        })
        .collect();
    Image::from_planes(&planes).expect("planes share dimensions")
}

/// Parameters of a synthetic stack.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub base: Image,
    /// Stack size.
    pub n: usize,
    /// Largest planted `|tx|` and `|ty|`.
    pub max_shift: i64,
    /// Blur applied outside each image's sharp band.
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.base.dims();
        if self.n < 2 {
            return Err(FuseError::InvalidConfig(format!("stack size must be >= 2, got {}", self.n)));
        }
        if self.n > h {
            return Err(FuseError::InvalidConfig(format!(
                "{} bands cannot cover {h} rows",
                self.n
            )));
        }
        if self.max_shift < 0 || 4 * self.max_shift as usize >= w.min(h) {
            return Err(FuseError::InvalidConfig(format!(
                "shift range {} must be below a quarter of the image extent {w}x{h}",
                self.max_shift
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(FuseError::InvalidConfig(format!("blur sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Ground-truth bookkeeping of a generated stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    /// Planted shift of every image relative to the base frame.
    pub shifts: Vec<(i64, i64)>,
    /// Sharp rows `[start, end)` of every image, in the base frame.
    pub bands: Vec<(usize, usize)>,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticStack {
    pub images: Vec<Image>,
    /// The unblurred base, in the base frame.
    pub truth: Image,
    pub meta: SyntheticMeta,
}

/// Splits `height` rows into `n` contiguous bands of random height; the
/// largest band is listed first.
fn random_bands(rng: &mut ChaCha8Rng, height: usize, n: usize) -> Vec<(usize, usize)> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..2.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut cuts = vec![0usize];
    let mut acc = 0.0;
    for wgt in &weights[..n - 1] {
        acc += wgt;
        cuts.push(((acc / total) * height as f64).round() as usize);
    }
    cuts.push(height);
    let mut bands: Vec<(usize, usize)> = cuts.windows(2).map(|c| (c[0], c[1])).collect();
    // stable: among equal heights the upper band is chosen
    let largest = (0..n)
        .max_by(|&a, &b| {
            let (la, lb) = (bands[a].1 - bands[a].0, bands[b].1 - bands[b].0);
            la.cmp(&lb).then(b.cmp(&a))
        })
        .expect("n >= 2");
    let first = bands.remove(largest);
    // remaining bands go to images 1.. in random order
    for i in (1..bands.len()).rev() {
        bands.swap(i, rng.random_range(0..=i));
    }
    bands.insert(0, first);
    bands
}

/// Generates `n` images: each is the base, blurred outside its own sharp
/// band, then translated by its planted shift (uncovered pixels are zero).
/// Image 0 owns the largest band. Every shift, including image 0's, is drawn
/// uniformly from `[-max_shift, max_shift]^2`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticStack> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = spec.base.dims();
    let bands = random_bands(&mut rng, h, spec.n);
    let shifts: Vec<(i64, i64)> = (0..spec.n)
        .map(|_| {
            (
                rng.random_range(-spec.max_shift..=spec.max_shift),
                rng.random_range(-spec.max_shift..=spec.max_shift),
            )
        })
        .collect();
    let blurred = gaussian_blur(&spec.base, spec.sigma);
    let channels = spec.base.channels();
    let mut images = Vec::with_capacity(spec.n);
    for (&(y0, y1), &(tx, ty)) in bands.iter().zip(&shifts) {
        let mut composite = blurred.clone();
        for y in y0..y1 {
            for x in 0..w {
                for c in 0..channels {
                    composite.set(x, y, c, spec.base.get(x, y, c));
                }
            }
        }
        images.push(translate(&composite, tx, ty)?.0);
    }
    Ok(SyntheticStack {
        images,
        truth: spec.base.clone(),
        meta: SyntheticMeta {
            shifts,
            bands,
            sigma: spec.sigma,
            seed: spec.seed,
        },
    })
}

/// Scores of one fused result against its synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// RMSE of each input, aligned with its planted shift.
    pub input_rmse: Vec<f64>,
    pub fused_rmse: f64,
    /// Variance of the 4-neighbour Laplacian of each input's luminance.
    pub input_sharpness: Vec<f64>,
    pub fused_sharpness: f64,
    /// Chebyshev distance between recovered and planted alignment; `None`
    /// for images the pipeline dropped.
    pub recovery_error: Vec<Option<f64>>,
    /// Inlier accuracy per image as reported by the pipeline.
    pub accuracy: Vec<Option<f64>>,
    pub reference: usize,
    /// Pixels in the region every aligned input covers.
    pub common_pixels: usize,
}

impl QualityReport {
    pub fn min_input_rmse(&self) -> f64 {
        self.input_rmse.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Variance of the discrete Laplacian over interior pixels of the luminance.
pub fn laplacian_variance(img: &Image) -> f64 {
    let gray = to_grayscale(img).expect("1 or 3 channels").plane(0);
    let (w, h) = gray.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut values = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            values.push(
                gray.get(x - 1, y) + gray.get(x + 1, y) + gray.get(x, y - 1) + gray.get(x, y + 1)
                    - 4.0 * gray.get(x, y),
            );
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Scores `fused` (in the frame of the report's reference image) against
/// the ground truth. Only pixels covered by every aligned input count.
pub fn evaluate(
    fused: &Image,
    stack: &[Image],
    truth: &Image,
    shifts: &[(i64, i64)],
    report: &RunReport,
) -> Result<QualityReport> {
    let (w, h) = truth.dims();
    if fused.dims() != (w, h) {
        return Err(FuseError::DimensionMismatch {
            expected: (w, h),
            actual: fused.dims(),
        });
    }
    if stack.len() != shifts.len() || report.images.len() != shifts.len() {
        return Err(FuseError::InvalidConfig(format!(
            "{} images, {} shifts and {} report entries disagree",
            stack.len(),
            shifts.len(),
            report.images.len()
        )));
    }
    for img in stack {
        if img.dims() != (w, h) || img.channels() != truth.channels() {
            return Err(FuseError::DimensionMismatch {
                expected: (w, h),
                actual: img.dims(),
            });
        }
    }
    if fused.channels() != truth.channels() {
        return Err(FuseError::UnsupportedChannels(fused.channels()));
    }
    let r = report.reference;
    let (rx, ry) = shifts[r];
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64;

    let channels = truth.channels();
    let mut fused_se = 0.0;
    let mut input_se = vec![0.0; stack.len()];
    let mut count = 0usize;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (bx, by) = (x - rx, y - ry);
            if !inside(bx, by) || !shifts.iter().all(|&(sx, sy)| inside(bx + sx, by + sy)) {
                continue;
            }
            count += 1;
            for c in 0..channels {
                let t = truth.get(bx as usize, by as usize, c);
                fused_se += (fused.get(x as usize, y as usize, c) - t).powi(2);
                for (i, img) in stack.iter().enumerate() {
                    let (sx, sy) = shifts[i];
                    let v = img.get((bx + sx) as usize, (by + sy) as usize, c);
                    input_se[i] += (v - t).powi(2);
                }
            }
        }
    }
    let samples = (count * channels).max(1) as f64;
    let recovery_error = report
        .images
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let reg = entry.registration.as_ref()?;
            let (px, py) = (shifts[r].0 - shifts[i].0, shifts[r].1 - shifts[i].1);
            Some((reg.tx - px as f64).abs().max((reg.ty - py as f64).abs()))
        })
        .collect();
    let accuracy = report
        .images
        .iter()
        .map(|e| e.registration.as_ref().and_then(|reg| reg.accuracy))
        .collect();
    Ok(QualityReport {
        input_rmse: input_se.iter().map(|se| (se / samples).sqrt()).collect(),
        fused_rmse: (fused_se / samples).sqrt(),
        input_sharpness: stack.iter().map(laplacian_variance).collect(),
        fused_sharpness: laplacian_variance(fused),
        recovery_error,
        accuracy,
        reference: r,
        common_pixels: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            base: procedural_base(96, 80, 7),
            n: 3,
            max_shift: 10,
            sigma,
            seed,
        }
    }

    #[test]
    fn base_is_textured_and_in_range() {
        let b = procedural_base(64, 64, 1);
        assert!(b.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(laplacian_variance(&b) > 1e-4);
        assert_eq!(procedural_base(64, 64, 1), b);
        assert_ne!(procedural_base(64, 64, 2), b);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let c = Image::from_fn(20, 10, |_, _| 0.3);
        let b = gaussian_blur(&c, 2.0);
        assert!(b.as_slice().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let k = gaussian_kernel(1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 11);
        let base = procedural_base(32, 32, 3);
        assert_eq!(gaussian_blur(&base, 0.0), base);
        assert!(laplacian_variance(&gaussian_blur(&base, 2.0)) < laplacian_variance(&base));
    }

    #[test]
    fn bands_cover_rows_and_first_is_largest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..9 {
            let bands = random_bands(&mut rng, 101, n);
            let mut sorted = bands.clone();
            sorted.sort();
            assert_eq!(sorted[0].0, 0);
            assert_eq!(sorted[n - 1].1, 101);
            assert!(sorted.windows(2).all(|p| p[0].1 == p[1].0));
            let len = |b: &(usize, usize)| b.1 - b.0;
            assert!(bands.iter().all(|b| len(b) <= len(&bands[0])));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(3.0, 11)).unwrap();
        let b = generate(&spec(3.0, 11)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.meta, b.meta);
        assert_ne!(generate(&spec(3.0, 12)).unwrap().meta, a.meta);
    }

    #[test]
    fn unblurred_images_are_shifted_copies() {
        let s = generate(&spec(0.0, 4)).unwrap();
        for (img, &(tx, ty)) in s.images.iter().zip(&s.meta.shifts) {
            let (expected, _) = translate(&s.truth, tx, ty).unwrap();
            assert_eq!(img, &expected);
        }
    }

    #[test]
    fn sharp_band_matches_base() {
        let s = generate(&spec(2.0, 9)).unwrap();
        let (tx, ty) = s.meta.shifts[1];
        let (y0, y1) = s.meta.bands[1];
        for y in y0..y1 {
            for x in 0..96i64 {
                let (px, py) = (x + tx, y as i64 + ty);
                if (0..96).contains(&px) && (0..80).contains(&py) {
                    assert_eq!(s.images[1].get(px as usize, py as usize, 0), s.truth.get(x as usize, y, 0));
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        let mut s = spec(1.0, 0);
        s.max_shift = 20;
        assert!(generate(&s).is_err());
        s.max_shift = 5;
        s.n = 1;
        assert!(generate(&s).is_err());
        s.n = 3;
        s.sigma = -1.0;
        assert!(generate(&s).is_err());
    }
}
