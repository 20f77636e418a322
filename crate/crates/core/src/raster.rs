//! Raster containers, summed-area tables and integer translation.

use crate::error::{FuseError, Result};

/// Row-major 2-D grid of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(FuseError::InvalidGeometry {
                width,
                height,
                channels: 1,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, y: usize) -> &mut [T] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Multi-channel image with samples normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(FuseError::UnsupportedChannels(channels));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(FuseError::InvalidGeometry {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    /// Single-channel image from a closure over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_grid(Grid::from_fn(width, height, f))
    }

    pub fn from_grid(grid: Grid<f64>) -> Self {
        Self {
            width: grid.width,
            height: grid.height,
            channels: 1,
            data: grid.data,
        }
    }

    /// Converts a single-channel image into a grid.
    pub fn into_grid(self) -> Result<Grid<f64>> {
        if self.channels != 1 {
            return Err(FuseError::UnsupportedChannels(self.channels));
        }
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self.data,
        })
    }

    pub fn plane(&self, channel: usize) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |x, y| self.get(x, y, channel))
    }

    pub fn from_planes(planes: &[Grid<f64>]) -> Result<Self> {
        let channels = planes.len();
        let (w, h) = planes.first().map(|p| p.dims()).unwrap_or((0, 0));
        if planes.iter().any(|p| p.dims() != (w, h)) {
            return Err(FuseError::DimensionMismatch {
                expected: (w, h),
                actual: planes.iter().map(|p| p.dims()).find(|&d| d != (w, h)).unwrap(),
            });
        }
        let mut data = Vec::with_capacity(w * h * channels);
        for i in 0..w * h {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Self::new(w, h, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Marks pixels of a warped raster that carry real source data.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask(Grid<bool>);

impl ValidityMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, true))
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self(grid)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn count_valid(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v).count()
    }

    pub fn intersect(&self, other: &ValidityMask) -> ValidityMask {
        let data = self
            .0
            .as_slice()
            .iter()
            .zip(other.0.as_slice())
            .map(|(&a, &b)| a && b)
            .collect();
        ValidityMask(Grid {
            width: self.0.width,
            height: self.0.height,
            data,
        })
    }
}

/// Luminance (0.299 R + 0.587 G + 0.114 B); single-channel input is returned as is.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                .collect();
            Image::new(img.width, img.height, 1, data)
        }
        c => Err(FuseError::UnsupportedChannels(c)),
    }
}

/// Recycles large sample buffers so that repeated per-image stages reuse
/// memory instead of mapping fresh zeroed pages every time.
#[derive(Debug, Default)]
pub struct BufferPool {
    reals: Vec<Vec<f64>>,
    flags: Vec<Vec<bool>>,
}

impl BufferPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// A `len`-sample buffer filled with `value`.
    pub fn real_vec(&mut self, len: usize, value: f64) -> Vec<f64> {
        let mut v = self.reals.pop().unwrap_or_default();
        v.clear();
        v.resize(len, value);
        v
    }

    pub fn real_grid(&mut self, width: usize, height: usize, value: f64) -> Grid<f64> {
        Grid {
            width,
            height,
            data: self.real_vec(width * height, value),
        }
    }

    pub fn flag_grid(&mut self, width: usize, height: usize, value: bool) -> Grid<bool> {
        let mut v = self.flags.pop().unwrap_or_default();
        v.clear();
        v.resize(width * height, value);
        Grid {
            width,
            height,
            data: v,
        }
    }

    pub fn recycle_vec(&mut self, v: Vec<f64>) {
        self.reals.push(v);
    }

    pub fn recycle_real(&mut self, grid: Grid<f64>) {
        self.reals.push(grid.data);
    }

    pub fn recycle_flag(&mut self, grid: Grid<bool>) {
        self.flags.push(grid.data);
    }
}

/// Summed-area table with a zero first row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    /// (width + 1) x (height + 1), row-major.
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn from_grid(grid: &Grid<f64>) -> Self {
        Self::from_grid_in(grid, &mut BufferPool::new())
    }

    /// As [`IntegralImage::from_grid`], drawing the table from `pool`.
    pub fn from_grid_in(grid: &Grid<f64>, pool: &mut BufferPool) -> Self {
        let (w, h) = grid.dims();
        let stride = w + 1;
        let mut table = pool.real_vec(stride * (h + 1), 0.0);
        for y in 0..h {
            let mut row_sum = 0.0;
            let src = grid.row(y);
            for x in 0..w {
                row_sum += src[x];
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        Self {
            width: w,
            height: h,
            table,
        }
    }

    /// Wraps a precomputed `(width + 1) x (height + 1)` table.
    pub(crate) fn from_table(width: usize, height: usize, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), (width + 1) * (height + 1));
        Self { width, height, table }
    }

    /// Returns the table storage to `pool`.
    pub fn recycle(self, pool: &mut BufferPool) {
        pool.recycle_vec(self.table);
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of the source over `[0, x) x [0, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over the half-open rectangle `[x0, x1) x [y0, y1)` clipped to the image.
    /// Rectangles that clip to nothing sum to zero.
    #[inline]
    pub fn box_sum(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        if cx1 <= cx0 || cy1 <= cy0 {
            return 0.0;
        }
        self.box_sum_unchecked(cx0, cy0, cx1, cy1)
    }

    /// Row `y` of the table: `at(x, y)` for `x` in `0..=width`.
    #[inline]
    pub fn table_row(&self, y: usize) -> &[f64] {
        let s = self.width + 1;
        &self.table[y * s..(y + 1) * s]
    }

    /// Four-lookup sum without clipping; bounds must already lie within the image.
    #[inline(always)]
    pub fn box_sum_unchecked(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        let t = &self.table;
        t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0]
    }

    /// Sum over a rectangle given by its top-left corner and size (clipped).
    #[inline]
    pub fn rect(&self, x: i64, y: i64, w: i64, h: i64) -> f64 {
        self.box_sum(x, y, x + w, y + h)
    }
}

/// Summed-area table of a single-channel image.
pub fn integral(img: &Image) -> Result<IntegralImage> {
    if img.channels != 1 {
        return Err(FuseError::UnsupportedChannels(img.channels));
    }
    let grid = Grid {
        width: img.width,
        height: img.height,
        data: img.data.clone(),
    };
    Ok(IntegralImage::from_grid(&grid))
}

/// Clipped rectangle sum; see [`IntegralImage::box_sum`].
pub fn box_sum(ii: &IntegralImage, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
    ii.box_sum(x0, y0, x1, y1)
}

fn check_translation(tx: i64, ty: i64, width: usize, height: usize) -> Result<()> {
    if tx.unsigned_abs() as usize >= width || ty.unsigned_abs() as usize >= height {
        return Err(FuseError::TranslationOutOfRange {
            tx,
            ty,
            width,
            height,
        });
    }
    Ok(())
}

/// Shifts a grid so that `out(x, y) = src(x - tx, y - ty)`; exposed pixels take `fill`.
pub fn translate_grid<T: Copy>(
    src: &Grid<T>,
    tx: i64,
    ty: i64,
    fill: T,
) -> Result<(Grid<T>, ValidityMask)> {
    let (w, h) = src.dims();
    check_translation(tx, ty, w, h)?;
    let mut out = Grid::filled(w, h, fill);
    let mut mask = Grid::filled(w, h, false);
    let (x_lo, x_hi) = ((tx.max(0)) as usize, (w as i64 + tx.min(0)) as usize);
    let (y_lo, y_hi) = ((ty.max(0)) as usize, (h as i64 + ty.min(0)) as usize);
    for y in y_lo..y_hi {
        let sy = (y as i64 - ty) as usize;
        let sx0 = (x_lo as i64 - tx) as usize;
        let n = x_hi - x_lo;
        out.row_mut(y)[x_lo..x_hi].copy_from_slice(&src.row(sy)[sx0..sx0 + n]);
        mask.row_mut(y)[x_lo..x_hi].fill(true);
    }
    Ok((out, ValidityMask(mask)))
}

/// Integer translation without interpolation: `out(x, y) = img(x - tx, y - ty)`.
/// Pixels whose source falls outside the image are zero and masked invalid.
pub fn translate(img: &Image, tx: i64, ty: i64) -> Result<(Image, ValidityMask)> {
    let (w, h) = img.dims();
    check_translation(tx, ty, w, h)?;
    let c = img.channels;
    let mut data = vec![0.0; w * h * c];
    let mut mask = Grid::filled(w, h, false);
    let (x_lo, x_hi) = ((tx.max(0)) as usize, (w as i64 + tx.min(0)) as usize);
    let (y_lo, y_hi) = ((ty.max(0)) as usize, (h as i64 + ty.min(0)) as usize);
    for y in y_lo..y_hi {
        let sy = (y as i64 - ty) as usize;
        let sx0 = (x_lo as i64 - tx) as usize;
        let n = (x_hi - x_lo) * c;
        let dst = (y * w + x_lo) * c;
        let src = (sy * w + sx0) * c;
        data[dst..dst + n].copy_from_slice(&img.data[src..src + n]);
        mask.row_mut(y)[x_lo..x_hi].fill(true);
    }
    Ok((Image::new(w, h, c, data)?, ValidityMask(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb(r: f64, g: f64, b: f64) -> Image {
        Image::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    fn naive_sum(img: &Grid<f64>, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let mut s = 0.0;
        for y in y0.max(0)..y1.min(img.height() as i64) {
            for x in x0.max(0)..x1.min(img.width() as i64) {
                s += img.get(x as usize, y as usize);
            }
        }
        s
    }

    #[test]
    fn grayscale_luminance() {
        assert!((to_grayscale(&rgb(1.0, 1.0, 1.0)).unwrap().get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(to_grayscale(&rgb(0.0, 0.0, 0.0)).unwrap().get(0, 0, 0), 0.0);
        assert!((to_grayscale(&rgb(1.0, 0.0, 0.0)).unwrap().get(0, 0, 0) - 0.299).abs() < 1e-15);
        let g = Image::from_fn(3, 2, |x, y| (x + y) as f64 / 4.0);
        assert_eq!(to_grayscale(&g).unwrap(), g);
    }

    #[test]
    fn rejects_bad_channel_counts() {
        assert!(matches!(
            Image::new(1, 1, 2, vec![0.0, 0.0]),
            Err(FuseError::UnsupportedChannels(2))
        ));
        let rgb = rgb(0.2, 0.3, 0.4);
        assert!(integral(&rgb).is_err());
    }

    #[test]
    fn integral_small_cases() {
        let zeros = Image::zeros(4, 4, 1).unwrap();
        let ii = integral(&zeros).unwrap();
        for y in 0..=4 {
            for x in 0..=4 {
                assert_eq!(ii.at(x, y), 0.0);
            }
        }
        let ones = Image::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(integral(&ones).unwrap().at(2, 2), 4.0);
        let ones3 = Image::from_fn(3, 3, |_, _| 1.0);
        let ii = integral(&ones3).unwrap();
        assert_eq!(box_sum(&ii, 0, 0, 3, 3), 9.0);
        assert_eq!(box_sum(&ii, 5, 5, 9, 9), 0.0);
        assert_eq!(box_sum(&ii, -4, -4, -1, 2), 0.0);
        assert_eq!(box_sum(&ii, -10, -10, 10, 10), 9.0);
    }

    #[test]
    fn random_rectangles_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = Grid::from_fn(64, 64, |_, _| rng.random::<f64>());
        let ii = IntegralImage::from_grid(&grid);
        for _ in 0..500 {
            let x0 = rng.random_range(-8..72);
            let x1 = rng.random_range(-8..72);
            let y0 = rng.random_range(-8..72);
            let y1 = rng.random_range(-8..72);
            let (x0, x1) = (x0.min(x1), x0.max(x1));
            let (y0, y1) = (y0.min(y1), y0.max(y1));
            let expected = naive_sum(&grid, x0, y0, x1, y1);
            let got = ii.box_sum(x0, y0, x1, y1);
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn translate_identity_and_column_mask() {
        let img = Image::from_fn(4, 4, |x, y| (x + 4 * y) as f64 / 16.0);
        let (same, mask) = translate(&img, 0, 0).unwrap();
        assert_eq!(same, img);
        assert_eq!(mask.count_valid(), 16);

        let (shifted, mask) = translate(&img, 1, 0).unwrap();
        for y in 0..4 {
            assert!(!mask.is_valid(0, y));
            assert_eq!(shifted.get(0, y, 0), 0.0);
            for x in 1..4 {
                assert!(mask.is_valid(x, y));
                assert_eq!(shifted.get(x, y, 0), img.get(x - 1, y, 0));
            }
        }
    }

    #[test]
    fn translate_rejects_oversized_shift() {
        let img = Image::zeros(4, 3, 1).unwrap();
        assert!(translate(&img, 4, 0).is_err());
        assert!(translate(&img, 0, -3).is_err());
        assert!(translate(&img, -3, 2).is_ok());
    }

    #[test]
    fn translate_multichannel() {
        let img = Image::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (out, mask) = translate(&img, -1, 0).unwrap();
        assert_eq!(out.as_slice(), &[0.4, 0.5, 0.6, 0.0, 0.0, 0.0]);
        assert!(mask.is_valid(0, 0) && !mask.is_valid(1, 0));
    }

    proptest! {
        #[test]
        fn integral_is_linear(
            vals in proptest::collection::vec(0u8..=255, 48),
            other in proptest::collection::vec(0u8..=255, 48),
            a in 0i32..5, b in 0i32..5,
        ) {
            let x = Grid::from_vec(8, 6, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let y = Grid::from_vec(8, 6, other.iter().map(|&v| v as f64).collect()).unwrap();
            let combo = Grid::from_fn(8, 6, |i, j| a as f64 * x.get(i, j) + b as f64 * y.get(i, j));
            let (ix, iy, ic) = (
                IntegralImage::from_grid(&x),
                IntegralImage::from_grid(&y),
                IntegralImage::from_grid(&combo),
            );
            for j in 0..=6 {
                for i in 0..=8 {
                    // integer-valued inputs keep every partial sum exact
                    prop_assert_eq!(ic.at(i, j), a as f64 * ix.at(i, j) + b as f64 * iy.at(i, j));
                }
            }
        }

        #[test]
        fn translate_round_trip(tx in -9i64..10, ty in -7i64..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(10, 8, |_, _| rng.random::<f64>());
            let (fwd, m1) = translate(&img, tx, ty).unwrap();
            let (back, m2) = translate(&fwd, -tx, -ty).unwrap();
            for y in 0..8 {
                for x in 0..10 {
                    if m2.is_valid(x, y) {
                        prop_assert_eq!(back.get(x, y, 0), img.get(x, y, 0));
                    }
                    if m1.is_valid(x, y) {
                        let (sx, sy) = ((x as i64 - tx) as usize, (y as i64 - ty) as usize);
                        prop_assert_eq!(fwd.get(x, y, 0), img.get(sx, sy, 0));
                    }
                }
            }
        }

        #[test]
        fn grayscale_stays_in_unit_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let v = to_grayscale(&rgb(r, g, b)).unwrap().get(0, 0, 0);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
        }
    }
}
