//! Box-filter Hessian scale space.
//!
//! Every octave is sampled at full image resolution by growing the filter
//! instead of shrinking the image. Octave `o` holds `L + 2` slots; slot `j`
//! uses filter size `w(o, j + 1)`, slots `1..=L` are detection layers and
//! slots `0` and `L + 1` only bound the 3x3x3 extremum search.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{FuseError, Result};
use crate::raster::{BufferPool, Grid, Image, IntegralImage};

pub const DEFAULT_ALPHA: f64 = 0.9;
/// Gaussian scale approximated by the smallest (9x9) filter.
pub const BASE_SIGMA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSpaceConfig {
    pub octaves: usize,
    pub layers: usize,
    pub alpha: f64,
}

impl Default for ScaleSpaceConfig {
    fn default() -> Self {
        Self {
            octaves: 5,
            layers: 2,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl ScaleSpaceConfig {
    pub fn new(octaves: usize, layers: usize) -> Self {
        Self {
            octaves,
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.octaves) {
            return Err(FuseError::InvalidConfig(format!(
                "octaves must lie in 1..=8, got {}",
                self.octaves
            )));
        }
        if !(1..=8).contains(&self.layers) {
            return Err(FuseError::InvalidConfig(format!(
                "layers must lie in 1..=8, got {}",
                self.layers
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FuseError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Filter size of slot `slot` (0..=L+1) in octave `octave` (1-based).
    pub fn slot_filter_size(&self, octave: usize, slot: usize) -> usize {
        filter_size(octave, slot + 1)
    }

    /// Largest filter any slot of this configuration needs.
    pub fn max_filter_size(&self) -> usize {
        self.slot_filter_size(self.octaves, self.layers + 1)
    }

    /// Distinct filter sizes across all octaves and slots, ascending.
    pub fn distinct_filter_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = (1..=self.octaves)
            .flat_map(|o| (0..self.layers + 2).map(move |j| filter_size(o, j + 1)))
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// Box filter side length for octave `o` and layer `k`: `(2^o * k + 1) * 3`.
pub fn filter_size(o: usize, k: usize) -> usize {
    ((1usize << o) * k + 1) * 3
}

/// Spacing between consecutive filter sizes inside octave `o`.
pub fn filter_step(o: usize) -> usize {
    6 << (o - 1)
}

fn check_filter_size(w: usize) -> Result<()> {
    if w < 9 || w.is_multiple_of(2) || w % 6 != 3 {
        return Err(FuseError::InvalidFilterSize(w));
    }
    Ok(())
}

/// Hessian-determinant response and Laplacian sign for one filter size.
#[derive(Debug, Clone)]
pub struct ResponseLayer {
    pub filter_size: usize,
    pub response: Grid<f64>,
    /// `true` where `Dxx + Dyy >= 0`.
    pub sign: Grid<bool>,
}

/// Summed-area table of a grid extended by `pad` replicated edge pixels on
/// every side, so box filters reaching past the border read the nearest
/// edge value.
#[derive(Debug, Clone)]
pub struct EdgeExtendedIntegral {
    pad: usize,
    width: usize,
    height: usize,
    table: IntegralImage,
}

impl EdgeExtendedIntegral {
    pub fn new(src: &Grid<f64>, pad: usize) -> Self {
        Self::new_in(src, pad, &mut BufferPool::new())
    }

    /// As [`EdgeExtendedIntegral::new`], drawing the table from `pool`.
    pub fn new_in(src: &Grid<f64>, pad: usize, pool: &mut BufferPool) -> Self {
        let (w, h) = src.dims();
        Self::from_samples(src.as_slice(), w, h, pad, pool)
    }

    /// `samples` holds `h` rows of `w` values.
    fn from_samples(samples: &[f64], w: usize, h: usize, pad: usize, pool: &mut BufferPool) -> Self {
        let (pw, ph) = (w + 2 * pad, h + 2 * pad);
        let stride = pw + 1;
        let mut table = pool.real_vec(stride * (ph + 1), 0.0);
        let clamp = |v: usize, n: usize| v.saturating_sub(pad).min(n - 1);
        for y in 0..ph {
            let sy = clamp(y, h);
            let row = &samples[sy * w..(sy + 1) * w];
            let (above, below) = table[y * stride..(y + 2) * stride].split_at_mut(stride);
            let mut row_sum = 0.0;
            for x in 0..pw {
                row_sum += row[clamp(x, w)];
                below[x + 1] = above[x + 1] + row_sum;
            }
        }
        Self {
            pad,
            width: w,
            height: h,
            table: IntegralImage::from_table(pw, ph, table),
        }
    }

    pub fn from_image(img: &Image, pad: usize) -> Result<Self> {
        if img.channels() != 1 {
            return Err(FuseError::UnsupportedChannels(img.channels()));
        }
        Ok(Self::new(&img.plane(0), pad))
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn recycle(self, pool: &mut BufferPool) {
        self.table.recycle(pool);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Table row for source row `y` (which may lie in the padding).
    #[inline]
    fn row(&self, y: i64) -> &[f64] {
        self.table.table_row((y + self.pad as i64) as usize)
    }
}

/// `out[c] = bottom[c] - top[c]`: column sums of a horizontal band.
fn band(out: &mut [f64], top: &[f64], bottom: &[f64]) {
    for ((o, t), b) in out.iter_mut().zip(top).zip(bottom) {
        *o = b - t;
    }
}

/// Computes `Dxx * Dyy - (alpha * Dxy)^2` and `Dxx + Dyy >= 0` at every pixel,
/// with each box response normalized by the filter area `w^2`.
///
/// Lobes follow the 9x9 template scaled by `l = w / 3`: `Dxx` is a
/// `w x (2l - 1)` box minus three times its central `l`-wide third, `Dyy` its
/// transpose, and `Dxy` four `l x l` quadrants separated by the centre row
/// and column.
pub fn hessian_response(src: &EdgeExtendedIntegral, w: usize, alpha: f64) -> Result<ResponseLayer> {
    hessian_response_in(src, w, alpha, &mut BufferPool::new())
}

/// As [`hessian_response`], drawing the output grids from `pool`.
pub fn hessian_response_in(
    src: &EdgeExtendedIntegral,
    w: usize,
    alpha: f64,
    pool: &mut BufferPool,
) -> Result<ResponseLayer> {
    check_filter_size(w)?;
    let b = (w / 2) as i64;
    if src.pad() < w / 2 {
        return Err(FuseError::InvalidConfig(format!(
            "edge padding {} too small for filter size {w}",
            src.pad()
        )));
    }
    let l = (w / 3) as i64;
    let h = l / 2;
    let inv_area = 1.0 / (w * w) as f64;
    let (width, height) = src.dims();
    let pad = src.pad() as i64;
    let cols = width + 2 * src.pad() + 1;
    // column sums of the horizontal bands each lobe spans, per output row
    let mut vxx = vec![0.0; cols];
    let mut vyy = vec![0.0; cols];
    let mut vyy_mid = vec![0.0; cols];
    let mut vtop = vec![0.0; cols];
    let mut vbot = vec![0.0; cols];
    // column offset into a band slice for source column x + d
    let at = |d: i64| (pad + d) as usize;
    let mut response = pool.real_grid(width, height, 0.0);
    let mut sign = pool.flag_grid(width, height, false);
    for y in 0..height {
        let y = y as i64;
        band(&mut vxx, src.row(y - l + 1), src.row(y + l));
        band(&mut vyy, src.row(y - b), src.row(y + b + 1));
        band(&mut vyy_mid, src.row(y - h), src.row(y - h + l));
        band(&mut vtop, src.row(y - l), src.row(y));
        band(&mut vbot, src.row(y + 1), src.row(y + l + 1));

        let xx_r = &vxx[at(b + 1)..][..width];
        let xx_l = &vxx[at(-b)..][..width];
        let xm_r = &vxx[at(l - h)..][..width];
        let xm_l = &vxx[at(-h)..][..width];
        let yy_r = &vyy[at(l)..][..width];
        let yy_l = &vyy[at(-l + 1)..][..width];
        let ym_r = &vyy_mid[at(l)..][..width];
        let ym_l = &vyy_mid[at(-l + 1)..][..width];
        let t_far = &vtop[at(l + 1)..][..width];
        let t_near = &vtop[at(1)..][..width];
        let t_mid = &vtop[at(0)..][..width];
        let t_left = &vtop[at(-l)..][..width];
        let b_far = &vbot[at(l + 1)..][..width];
        let b_near = &vbot[at(1)..][..width];
        let b_mid = &vbot[at(0)..][..width];
        let b_left = &vbot[at(-l)..][..width];

        let resp_row = response.row_mut(y as usize);
        let sign_row = sign.row_mut(y as usize);
        for i in 0..width {
            let dxx = (xx_r[i] - xx_l[i]) - 3.0 * (xm_r[i] - xm_l[i]);
            let dyy = (yy_r[i] - yy_l[i]) - 3.0 * (ym_r[i] - ym_l[i]);
            let dxy = (t_far[i] - t_near[i]) + (b_mid[i] - b_left[i])
                - (t_mid[i] - t_left[i])
                - (b_far[i] - b_near[i]);
            let (dxx, dyy, dxy) = (dxx * inv_area, dyy * inv_area, alpha * dxy * inv_area);
            resp_row[i] = dxx * dyy - dxy * dxy;
            sign_row[i] = dxx + dyy >= 0.0;
        }
    }
    Ok(ResponseLayer {
        filter_size: w,
        response,
        sign,
    })
}

/// Per-octave response layers; layers with equal filter sizes are shared.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    config: ScaleSpaceConfig,
    width: usize,
    height: usize,
    octaves: Vec<Vec<Arc<ResponseLayer>>>,
    layers_computed: usize,
}

impl ScaleSpace {
    pub fn config(&self) -> &ScaleSpaceConfig {
        &self.config
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Layer at 1-based `octave` and slot `0..=L+1`.
    pub fn layer(&self, octave: usize, slot: usize) -> &ResponseLayer {
        &self.octaves[octave - 1][slot]
    }

    pub fn layer_arc(&self, octave: usize, slot: usize) -> &Arc<ResponseLayer> {
        &self.octaves[octave - 1][slot]
    }

    /// Number of [`hessian_response`] evaluations performed while building.
    pub fn layers_computed(&self) -> usize {
        self.layers_computed
    }

    /// Iterates `(octave, slot, layer)` over detection layers only.
    pub fn detection_layers(&self) -> impl Iterator<Item = (usize, usize, &ResponseLayer)> + '_ {
        let l = self.config.layers;
        self.octaves.iter().enumerate().flat_map(move |(oi, layers)| {
            (1..=l).map(move |j| (oi + 1, j, layers[j].as_ref()))
        })
    }

    /// Hands every layer's storage back to `pool`.
    pub fn recycle(self, pool: &mut BufferPool) {
        for layer in self.octaves.into_iter().flatten() {
            // shared layers unwrap once their last handle is reached
            if let Ok(layer) = Arc::try_unwrap(layer) {
                pool.recycle_real(layer.response);
                pool.recycle_flag(layer.sign);
            }
        }
    }

    /// Distinct layers in ascending filter size.
    pub fn distinct_layers(&self) -> Vec<&ResponseLayer> {
        let mut by_size: BTreeMap<usize, &ResponseLayer> = BTreeMap::new();
        for layers in &self.octaves {
            for layer in layers {
                by_size.entry(layer.filter_size).or_insert(layer.as_ref());
            }
        }
        by_size.into_values().collect()
    }
}

/// Builds the scale space of a grayscale image.
pub fn build_scale_space(img: &Image, cfg: &ScaleSpaceConfig) -> Result<ScaleSpace> {
    build_scale_space_in(img, cfg, &mut BufferPool::new())
}

/// As [`build_scale_space`], drawing all storage from `pool`.
pub fn build_scale_space_in(img: &Image, cfg: &ScaleSpaceConfig, pool: &mut BufferPool) -> Result<ScaleSpace> {
    cfg.validate()?;
    if img.channels() != 1 {
        return Err(FuseError::UnsupportedChannels(img.channels()));
    }
    let (width, height) = img.dims();
    let largest = cfg.max_filter_size();
    if width.min(height) < largest {
        return Err(FuseError::ImageTooSmall {
            width,
            height,
            filter: largest,
        });
    }
    let src = EdgeExtendedIntegral::from_samples(img.as_slice(), width, height, largest / 2, pool);
    let mut cache: BTreeMap<usize, Arc<ResponseLayer>> = BTreeMap::new();
    let mut layers_computed = 0;
    let mut octaves = Vec::with_capacity(cfg.octaves);
    for o in 1..=cfg.octaves {
        let mut layers = Vec::with_capacity(cfg.layers + 2);
        for slot in 0..cfg.layers + 2 {
            let w = cfg.slot_filter_size(o, slot);
            let layer = match cache.get(&w) {
                Some(layer) => Arc::clone(layer),
                None => {
                    let layer = Arc::new(hessian_response_in(&src, w, cfg.alpha, pool)?);
                    layers_computed += 1;
                    cache.insert(w, Arc::clone(&layer));
                    layer
                }
            };
            layers.push(layer);
        }
        octaves.push(layers);
    }
    src.recycle(pool);
    Ok(ScaleSpace {
        config: *cfg,
        width,
        height,
        octaves,
        layers_computed,
    })
}
