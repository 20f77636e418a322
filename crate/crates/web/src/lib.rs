//! Browser demo: a synthetic misaligned stack, its Hessian response layers,
//! and guided-filter fusion with adjustable radius and regularisation.
//!
//! Stages are driven one by one here rather than through the timed pipeline
//! runner, which reads a wall clock that `wasm32-unknown-unknown` lacks.

use focusfuse::features::{describe_all, detect, KeyPoint, DEFAULT_THRESHOLD};
use focusfuse::fusion::{
    align_saliency, fuse, guided_filter, initial_weights, saliency, GuidedFilterParams, SaliencyMap, WeightMap,
};
use focusfuse::matching::{match_top_k, DEFAULT_RATIO, DEFAULT_TOP_K};
use focusfuse::raster::{to_grayscale, translate};
use focusfuse::registration::{
    hough_vote, register_stack, select_reference, Aggregation, TranslationModel, DEFAULT_CELL_SIZE,
};
use focusfuse::scale_space::{build_scale_space, ScaleSpace, ScaleSpaceConfig};
use focusfuse::synth::{generate, procedural_base, SyntheticSpec, SyntheticStack};
use focusfuse::{Grid, Image, IntegralImage};
use wasm_bindgen::prelude::*;

const DESCRIPTOR_DIM: usize = 64;

fn js_err(e: focusfuse::FuseError) -> JsError {
    JsError::new(&e.to_string())
}

fn gray_rgba(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values
        .flat_map(|v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn image_rgba(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.get(x, y, c.min(img.channels() - 1));
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    stack: SyntheticStack,
    spaces: Vec<ScaleSpace>,
    keypoints: Vec<Vec<KeyPoint>>,
    saliency: Vec<SaliencyMap>,
    models: Vec<TranslationModel>,
    reference: usize,
    weights: Vec<WeightMap>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a three-image stack on a `size`-pixel procedural base and
    /// registers it. `octaves` must leave the largest filter inside the image.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u64, sigma: f64, max_shift: i64, octaves: usize) -> Result<Demo, JsError> {
        let stack = generate(&SyntheticSpec {
            base: procedural_base(size, size, seed),
            n: 3,
            max_shift,
            sigma,
            seed,
        })
        .map_err(js_err)?;
        let cfg = ScaleSpaceConfig::new(octaves, 2);
        let mut spaces = Vec::new();
        let mut keypoints = Vec::new();
        let mut descriptors = Vec::new();
        for img in &stack.images {
            let gray = to_grayscale(img).map_err(js_err)?;
            let ss = build_scale_space(&gray, &cfg).map_err(js_err)?;
            let kps = detect(&ss, DEFAULT_THRESHOLD);
            let ii = IntegralImage::from_grid(&gray.plane(0));
            descriptors.push(describe_all(&ii, &kps, DESCRIPTOR_DIM).map_err(js_err)?);
            keypoints.push(kps);
            spaces.push(ss);
        }
        let counts: Vec<usize> = keypoints.iter().map(Vec::len).collect();
        let reference = select_reference(&counts);
        let models = (0..stack.images.len())
            .map(|i| {
                if i == reference {
                    return Ok(TranslationModel::identity());
                }
                let matches = match_top_k(&descriptors[i], &descriptors[reference], DEFAULT_RATIO, DEFAULT_TOP_K);
                hough_vote(&matches, DEFAULT_CELL_SIZE, Aggregation::L1).map_err(js_err)
            })
            .collect::<Result<Vec<_>, JsError>>()?;
        let saliency = spaces.iter().map(saliency).collect();
        Ok(Demo {
            stack,
            spaces,
            keypoints,
            saliency,
            models,
            reference,
            weights: Vec::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.stack.truth.width()
    }

    pub fn height(&self) -> usize {
        self.stack.truth.height()
    }

    pub fn count(&self) -> usize {
        self.stack.images.len()
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    /// Input image `i` as RGBA bytes.
    pub fn image(&self, i: usize) -> Vec<u8> {
        image_rgba(&self.stack.images[i])
    }

    pub fn truth(&self) -> Vec<u8> {
        image_rgba(&self.stack.truth)
    }

    pub fn keypoint_count(&self, i: usize) -> usize {
        self.keypoints[i].len()
    }

    /// Box filter side of a layer; slots run from 0 to layers + 1.
    pub fn filter_size(&self, octave: usize, slot: usize) -> usize {
        self.spaces[0].layer(octave, slot).filter_size
    }

    /// Response layer of image `i` as RGBA: positive responses in grey on a
    /// square-root scale, negative ones in blue, and this layer's keypoints
    /// in red.
    pub fn response(&self, i: usize, octave: usize, slot: usize) -> Vec<u8> {
        let layer = self.spaces[i].layer(octave, slot);
        let grid = &layer.response;
        let peak = grid.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut out: Vec<u8> = grid
            .as_slice()
            .iter()
            .flat_map(|&v| {
                let t = ((v.abs() / peak).sqrt() * 255.0) as u8;
                if v >= 0.0 {
                    [t, t, t, 255]
                } else {
                    [0, t / 2, t, 255]
                }
            })
            .collect();
        let w = grid.width();
        for kp in self.keypoints[i].iter().filter(|k| k.octave == octave && k.layer == slot) {
            let (x, y) = (kp.x.round() as usize, kp.y.round() as usize);
            if x < w && y < grid.height() {
                out[(y * w + x) * 4..(y * w + x) * 4 + 4].copy_from_slice(&[255, 40, 40, 255]);
            }
        }
        out
    }

    /// Recovered shift of image `i` into the reference frame.
    pub fn shift_x(&self, i: usize) -> i64 {
        self.models[i].rounded().0
    }

    pub fn shift_y(&self, i: usize) -> i64 {
        self.models[i].rounded().1
    }

    /// Planted alignment of image `i` onto the reference.
    pub fn planted_x(&self, i: usize) -> i64 {
        self.stack.meta.shifts[self.reference].0 - self.stack.meta.shifts[i].0
    }

    pub fn planted_y(&self, i: usize) -> i64 {
        self.stack.meta.shifts[self.reference].1 - self.stack.meta.shifts[i].1
    }

    /// Share of voting matches that landed in the winning cell.
    pub fn accuracy(&self, i: usize) -> f64 {
        self.models[i].stats().accuracy
    }

    /// Aligns, weights and blends the stack; returns the fused RGBA image.
    pub fn fuse(&mut self, radius: usize, epsilon: f64) -> Result<Vec<u8>, JsError> {
        let models: Vec<Option<TranslationModel>> = self.models.iter().cloned().map(Some).collect();
        let aligned = register_stack(&self.stack.images, self.reference, &models).map_err(js_err)?;
        let maps = self
            .saliency
            .iter()
            .zip(&self.models)
            .map(|(s, m)| align_saliency(s, m))
            .collect::<focusfuse::Result<Vec<_>>>()
            .map_err(js_err)?;
        let binary = initial_weights(&maps).map_err(js_err)?;
        let params = GuidedFilterParams { radius, epsilon };
        self.weights = self
            .stack
            .images
            .iter()
            .zip(&self.models)
            .zip(&binary)
            .map(|((img, m), w)| {
                let (tx, ty) = m.rounded();
                let guide = translate(&to_grayscale(img)?, tx, ty)?.0;
                guided_filter(&guide, w, &params)
            })
            .collect::<focusfuse::Result<Vec<_>>>()
            .map_err(js_err)?;
        let (images, masks): (Vec<Image>, Vec<_>) = aligned.into_iter().unzip();
        let fused = fuse(&images, &self.weights, &masks, self.reference).map_err(js_err)?;
        Ok(image_rgba(&fused))
    }

    /// Refined weight map of image `i` from the last [`Demo::fuse`] call.
    pub fn weights(&self, i: usize) -> Vec<u8> {
        match self.weights.get(i) {
            Some(w) => gray_rgba(w.grid().as_slice().iter().copied()),
            None => gray_rgba(Grid::filled(self.width(), self.height(), 0.0).into_vec().into_iter()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_registers_and_fuses() {
        let mut demo = Demo::new(192, 2, 3.0, 15, 3).unwrap_or_else(|_| panic!("demo builds"));
        let bytes = demo.width() * demo.height() * 4;
        for i in 0..demo.count() {
            assert_eq!(demo.shift_x(i), demo.planted_x(i));
            assert_eq!(demo.shift_y(i), demo.planted_y(i));
            assert_eq!(demo.image(i).len(), bytes);
            assert_eq!(demo.response(i, 1, 1).len(), bytes);
        }
        assert_eq!(demo.filter_size(2, 0), 15);
        let fused = demo.fuse(8, 0.1).unwrap_or_else(|_| panic!("fusion succeeds"));
        assert_eq!(fused.len(), bytes);
        assert!(fused.chunks(4).all(|px| px[3] == 255));
        assert_eq!(demo.weights(0).len(), bytes);
    }
}
