//! Saliency-driven weighted fusion.
//!
//! The saliency of a pixel is its strongest Hessian response over all
//! detection layers. After alignment, each pixel picks the source with the
//! largest saliency (a binary weight map), the binary maps are smoothed by a
//! guided filter steered by each aligned source, and the sources are blended
//! with the normalized refined weights.

use crate::error::{FuseError, Result};
use crate::raster::{translate_grid, BufferPool, Grid, Image, ValidityMask};
use crate::registration::TranslationModel;
use crate::scale_space::ScaleSpace;

pub const DEFAULT_GF_RADIUS: usize = 45;
pub const DEFAULT_GF_EPSILON: f64 = 0.3;

/// Per-pixel focus measure, with the mask of pixels that carry real data.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Grid<f64>,
    pub mask: ValidityMask,
}

/// Fusion weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(pub Grid<f64>);

impl WeightMap {
    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_GF_RADIUS,
            epsilon: DEFAULT_GF_EPSILON,
        }
    }
}

impl GuidedFilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(FuseError::InvalidConfig("guided filter radius must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(FuseError::InvalidConfig(format!(
                "guided filter epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Maximum response over every detection layer of every octave.
pub fn saliency(ss: &ScaleSpace) -> SaliencyMap {
    let (w, h) = ss.dims();
    let mut values = Grid::filled(w, h, f64::NEG_INFINITY);
    for (_, _, layer) in ss.detection_layers() {
        for (out, &r) in values.as_mut_slice().iter_mut().zip(layer.response.as_slice()) {
            if r > *out {
                *out = r;
            }
        }
    }
    SaliencyMap {
        values,
        mask: ValidityMask::full(w, h),
    }
}

/// Moves a saliency map into the reference frame with the same integer
/// shift used for its image.
pub fn align_saliency(s: &SaliencyMap, model: &TranslationModel) -> Result<SaliencyMap> {
    let (tx, ty) = model.rounded();
    let (values, moved) = translate_grid(&s.values, tx, ty, 0.0)?;
    let (mask_grid, _) = translate_grid(s.mask.grid(), tx, ty, false)?;
    let mask = ValidityMask::from_grid(mask_grid).intersect(&moved);
    Ok(SaliencyMap { values, mask })
}

fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(FuseError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Binary weights: among the maps valid at a pixel the most salient gets 1,
/// ties going to the lowest index. Pixels valid nowhere stay all-zero.
pub fn initial_weights(maps: &[SaliencyMap]) -> Result<Vec<WeightMap>> {
    if maps.len() < 2 {
        return Err(FuseError::InvalidConfig(format!(
            "need at least two saliency maps, got {}",
            maps.len()
        )));
    }
    let dims = maps[0].values.dims();
    for m in maps {
        check_dims(dims, m.values.dims())?;
        check_dims(dims, m.mask.dims())?;
    }
    let (w, h) = dims;
    let mut weights: Vec<Grid<f64>> = (0..maps.len()).map(|_| Grid::filled(w, h, 0.0)).collect();
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, f64)> = None;
            for (i, m) in maps.iter().enumerate() {
                if !m.mask.is_valid(x, y) {
                    continue;
                }
                let v = m.values.get(x, y);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            if let Some((i, _)) = best {
                weights[i].set(x, y, 1.0);
            }
        }
    }
    Ok(weights.into_iter().map(WeightMap).collect())
}

/// Window means over `(2r+1)^2` neighbourhoods clipped to the grid, by
/// running sums along rows and then columns. `data` holds `h` rows of `w`.
fn box_mean(data: &[f64], w: usize, h: usize, r: usize, pool: &mut BufferPool) -> Grid<f64> {
    let mut rows = pool.real_grid(w, h, 0.0);
    let mut prefix = vec![0.0; w + 1];
    for y in 0..h {
        for (x, v) in data[y * w..(y + 1) * w].iter().enumerate() {
            prefix[x + 1] = prefix[x] + v;
        }
        for (x, out) in rows.row_mut(y).iter_mut().enumerate() {
            *out = prefix[(x + r + 1).min(w)] - prefix[x.saturating_sub(r)];
        }
    }
    let col_count: Vec<f64> = (0..w).map(|x| ((x + r + 1).min(w) - x.saturating_sub(r)) as f64).collect();
    let mut out = pool.real_grid(w, h, 0.0);
    let mut acc = vec![0.0; w];
    for y in 0..r.min(h) {
        acc.iter_mut().zip(rows.row(y)).for_each(|(a, v)| *a += v);
    }
    for y in 0..h {
        if y + r < h {
            acc.iter_mut().zip(rows.row(y + r)).for_each(|(a, v)| *a += v);
        }
        if y > r {
            acc.iter_mut().zip(rows.row(y - r - 1)).for_each(|(a, v)| *a -= v);
        }
        let n_rows = ((y + r + 1).min(h) - y.saturating_sub(r)) as f64;
        for ((o, a), c) in out.row_mut(y).iter_mut().zip(&acc).zip(&col_count) {
            *o = a / (c * n_rows);
        }
    }
    pool.recycle_real(rows);
    out
}

/// Edge-preserving refinement of `input` steered by `guide`.
///
/// Per window: `a = (mean(I*W) - mu*mean(W)) / (var(I) + eps)` and
/// `b = mean(W) - a*mu`; the output averages `a*I + b` over all windows that
/// cover a pixel. Windows are clipped at the border and every mean costs
/// O(1) per pixel, independent of the radius. The result is clamped to
/// `[0, 1]`.
pub fn guided_filter(guide: &Image, input: &WeightMap, params: &GuidedFilterParams) -> Result<WeightMap> {
    guided_filter_in(guide, input, params, &mut BufferPool::new())
}

/// As [`guided_filter`], drawing temporaries from `pool`.
pub fn guided_filter_in(
    guide: &Image,
    input: &WeightMap,
    params: &GuidedFilterParams,
    pool: &mut BufferPool,
) -> Result<WeightMap> {
    params.validate()?;
    if guide.channels() != 1 {
        return Err(FuseError::UnsupportedChannels(guide.channels()));
    }
    check_dims(guide.dims(), input.dims())?;
    let r = params.radius;
    let (w, h) = guide.dims();
    let i = guide.as_slice();
    let p = input.0.as_slice();
    let mean_i = box_mean(i, w, h, r, pool);
    let mean_p = box_mean(p, w, h, r, pool);
    let mut tmp = pool.real_vec(w * h, 0.0);
    tmp.iter_mut().zip(i.iter().zip(p)).for_each(|(t, (a, b))| *t = a * b);
    let mut mean_ip = box_mean(&tmp, w, h, r, pool);
    tmp.iter_mut().zip(i).for_each(|(t, a)| *t = a * a);
    let mut mean_ii = box_mean(&tmp, w, h, r, pool);

    // a overwrites mean(I*W), b overwrites mean(I*I)
    for k in 0..w * h {
        let mu = mean_i.as_slice()[k];
        let mp = mean_p.as_slice()[k];
        let var = mean_ii.as_slice()[k] - mu * mu;
        let cov = mean_ip.as_slice()[k] - mu * mp;
        let ak = cov / (var + params.epsilon);
        mean_ip.as_mut_slice()[k] = ak;
        mean_ii.as_mut_slice()[k] = mp - ak * mu;
    }
    pool.recycle_real(mean_i);
    pool.recycle_real(mean_p);
    let mean_a = box_mean(mean_ip.as_slice(), w, h, r, pool);
    let mean_b = box_mean(mean_ii.as_slice(), w, h, r, pool);
    pool.recycle_real(mean_ip);
    pool.recycle_real(mean_ii);
    for (k, t) in tmp.iter_mut().enumerate() {
        *t = (mean_a.as_slice()[k] * i[k] + mean_b.as_slice()[k]).clamp(0.0, 1.0);
    }
    pool.recycle_real(mean_a);
    pool.recycle_real(mean_b);
    Ok(WeightMap(Grid::from_vec(w, h, tmp)?))
}

/// Sum of weights below which a pixel falls back to an unweighted mean.
pub const MIN_WEIGHT_SUM: f64 = 1e-8;

/// Blends aligned images: `F = sum(W_i * I_i) / sum(W_i)` per channel with
/// masked-out pixels contributing nothing. Where the weights vanish the
/// mean of the valid sources is used, or the reference pixel if none is valid.
pub fn fuse(
    images: &[Image],
    weights: &[WeightMap],
    masks: &[ValidityMask],
    reference: usize,
) -> Result<Image> {
    let n = images.len();
    if n < 2 || weights.len() != n || masks.len() != n || reference >= n {
        return Err(FuseError::InvalidConfig(format!(
            "fuse needs n >= 2 images with matching weights and masks (got {n}, {}, {})",
            weights.len(),
            masks.len()
        )));
    }
    let dims = images[0].dims();
    let channels = images[0].channels();
    for k in 0..n {
        check_dims(dims, images[k].dims())?;
        check_dims(dims, weights[k].dims())?;
        check_dims(dims, masks[k].dims())?;
        if images[k].channels() != channels {
            return Err(FuseError::UnsupportedChannels(images[k].channels()));
        }
    }
    let (w, h) = dims;
    let mut out = Image::zeros(w, h, channels)?;
    let mut acc = vec![0.0; channels];
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for k in 0..n {
                if !masks[k].is_valid(x, y) {
                    continue;
                }
                let wk = weights[k].0.get(x, y).clamp(0.0, 1.0);
                wsum += wk;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wk * images[k].get(x, y, c);
                }
            }
            if wsum >= MIN_WEIGHT_SUM {
                for (c, a) in acc.iter().enumerate() {
                    out.set(x, y, c, a / wsum);
                }
                continue;
            }
            let valid: Vec<usize> = (0..n).filter(|&k| masks[k].is_valid(x, y)).collect();
            for c in 0..channels {
                let v = if valid.is_empty() {
                    images[reference].get(x, y, c)
                } else {
                    valid.iter().map(|&k| images[k].get(x, y, c)).sum::<f64>() / valid.len() as f64
                };
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}
