//! End-to-end orchestration: per-image analysis, registration against a
//! reference, weight construction and blending, with stage timings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::features::{describe_all, detect, grid_side, Descriptor, KeyPoint, DEFAULT_THRESHOLD};
use crate::fusion::{
    align_saliency, fuse, guided_filter_in, initial_weights, saliency, GuidedFilterParams, SaliencyMap,
    DEFAULT_GF_EPSILON, DEFAULT_GF_RADIUS,
};
use crate::io;
use crate::matching::{match_top_k, DEFAULT_RATIO, DEFAULT_TOP_K};
use crate::raster::{to_grayscale, translate, BufferPool, Image, IntegralImage};
use crate::registration::{
    hough_vote, register_stack, select_reference, Aggregation, TranslationModel, DEFAULT_CELL_SIZE,
};
use crate::scale_space::{build_scale_space_in, ScaleSpaceConfig, DEFAULT_ALPHA};

/// Which image defines the output frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceChoice {
    /// The image with the most keypoints.
    #[default]
    Auto,
    Index(usize),
}

impl FromStr for ReferenceChoice {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ReferenceChoice::Auto);
        }
        s.parse::<usize>()
            .map(ReferenceChoice::Index)
            .map_err(|_| FuseError::InvalidConfig(format!("reference must be 'auto' or an index, got '{s}'")))
    }
}

/// Optional debug output directories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DumpDirs {
    pub saliency: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub responses: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub octaves: usize,
    pub layers: usize,
    pub alpha: f64,
    pub descriptor_dim: usize,
    pub ratio_threshold: f64,
    pub top_k: usize,
    pub cell_size: f64,
    pub aggregation: Aggregation,
    pub threshold: f64,
    pub gf_radius: usize,
    pub gf_epsilon: f64,
    pub reference: ReferenceChoice,
    /// Drop sensed images that cannot be registered instead of failing.
    pub skip_unregistrable: bool,
    pub dumps: DumpDirs,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            octaves: 5,
            layers: 2,
            alpha: DEFAULT_ALPHA,
            descriptor_dim: 64,
            ratio_threshold: DEFAULT_RATIO,
            top_k: DEFAULT_TOP_K,
            cell_size: DEFAULT_CELL_SIZE,
            aggregation: Aggregation::L1,
            threshold: DEFAULT_THRESHOLD,
            gf_radius: DEFAULT_GF_RADIUS,
            gf_epsilon: DEFAULT_GF_EPSILON,
            reference: ReferenceChoice::Auto,
            skip_unregistrable: false,
            dumps: DumpDirs::default(),
        }
    }
}

impl PipelineConfig {
    pub fn scale_space(&self) -> ScaleSpaceConfig {
        ScaleSpaceConfig {
            octaves: self.octaves,
            layers: self.layers,
            alpha: self.alpha,
        }
    }

    pub fn guided_filter(&self) -> GuidedFilterParams {
        GuidedFilterParams {
            radius: self.gf_radius,
            epsilon: self.gf_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale_space().validate()?;
        self.guided_filter().validate()?;
        grid_side(self.descriptor_dim)?;
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0) {
            return Err(FuseError::InvalidConfig(format!(
                "ratio threshold must lie in (0, 1], got {}",
                self.ratio_threshold
            )));
        }
        if self.top_k == 0 {
            return Err(FuseError::InvalidConfig("top-k must be >= 1".into()));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(FuseError::InvalidConfig(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(FuseError::InvalidConfig(format!(
                "detection threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage, summed over images where a stage runs per
/// image. `compute` sums the algorithmic stages; `total` also covers I/O.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub io: f64,
    pub grayscale: f64,
    pub scale_space: f64,
    pub detect: f64,
    pub describe: f64,
    pub saliency: f64,
    pub matching: f64,
    pub voting: f64,
    pub warp: f64,
    pub weights: f64,
    pub filter: f64,
    pub fuse: f64,
    pub compute: f64,
    pub total: f64,
}

impl StageTimings {
    fn stages(&self) -> [f64; 11] {
        [
            self.grayscale,
            self.scale_space,
            self.detect,
            self.describe,
            self.saliency,
            self.matching,
            self.voting,
            self.warp,
            self.weights,
            self.filter,
            self.fuse,
        ]
    }

    /// Sum of the algorithmic stages.
    pub fn stage_sum(&self) -> f64 {
        self.stages().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Estimated shift into the reference frame, before rounding.
    pub tx: f64,
    pub ty: f64,
    /// Integer shift applied to the image.
    pub shift: (i64, i64),
    pub a_num: usize,
    pub v_num: usize,
    /// `v_num / a_num`; absent for the reference image.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub keypoints: usize,
    pub descriptors: usize,
    /// Response layers evaluated while building this image's scale space.
    pub layers_computed: usize,
    /// Distinct filter sizes the configuration asks for.
    pub layers_distinct: usize,
    pub registration: Option<RegistrationReport>,
    /// Why the image was left out of the fusion, if it was.
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub width: usize,
    pub height: usize,
    pub reference: usize,
    pub images: Vec<ImageReport>,
    pub timings: StageTimings,
}

impl RunReport {
    /// Mean inlier accuracy over registered sensed images.
    pub fn mean_accuracy(&self) -> Option<f64> {
        let acc: Vec<f64> = self
            .images
            .iter()
            .filter_map(|i| i.registration.as_ref().and_then(|r| r.accuracy))
            .collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }

    /// The report with every timing zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings: StageTimings::default(),
            ..self.clone()
        }
    }
}

/// Per-image products that outlive the scale space.
struct Analysis {
    keypoints: Vec<KeyPoint>,
    descriptors: Vec<Descriptor>,
    saliency: SaliencyMap,
    layers_computed: usize,
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

fn write_keypoints_csv(path: &Path, keypoints: &[KeyPoint]) -> Result<()> {
    let mut out = String::from("x,y,scale,response,laplacian_sign,octave,layer\n");
    for k in keypoints {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            k.x, k.y, k.scale, k.response, k.laplacian_sign as u8, k.octave, k.layer
        )
        .expect("writing to a String");
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Grayscale, scale space, detection, description and saliency for one
/// image. The scale space is dropped before returning.
fn analyze(
    name: &str,
    image: &Image,
    cfg: &PipelineConfig,
    t: &mut StageTimings,
    pool: &mut BufferPool,
) -> Result<Analysis> {
    let start = Instant::now();
    let gray = to_grayscale(image)?;
    t.grayscale += elapsed(start);

    let start = Instant::now();
    let ss = build_scale_space_in(&gray, &cfg.scale_space(), pool)?;
    t.scale_space += elapsed(start);

    let start = Instant::now();
    let keypoints = detect(&ss, cfg.threshold);
    t.detect += elapsed(start);

    let start = Instant::now();
    let ii = IntegralImage::from_grid_in(&gray.plane(0), pool);
    let descriptors = describe_all(&ii, &keypoints, cfg.descriptor_dim)?;
    t.describe += elapsed(start);

    let start = Instant::now();
    let sal = saliency(&ss);
    t.saliency += elapsed(start);

    let start = Instant::now();
    let stem = file_stem(name);
    if let Some(dir) = &cfg.dumps.responses {
        for layer in ss.distinct_layers() {
            io::save_grid_normalized(&dir.join(format!("{stem}_w{}.png", layer.filter_size)), &layer.response)?;
        }
    }
    if let Some(dir) = &cfg.dumps.keypoints {
        write_keypoints_csv(&dir.join(format!("{stem}_keypoints.csv")), &keypoints)?;
    }
    t.io += elapsed(start);

    let layers_computed = ss.layers_computed();
    ii.recycle(pool);
    ss.recycle(pool);
    Ok(Analysis {
        keypoints,
        descriptors,
        saliency: sal,
        layers_computed,
    })
}

fn registration_failure(name: &str, err: FuseError) -> FuseError {
    match err {
        FuseError::RegistrationFailed { reason, .. } => FuseError::RegistrationFailed {
            image: name.to_string(),
            reason,
        },
        FuseError::TranslationOutOfRange { tx, ty, .. } => FuseError::RegistrationFailed {
            image: name.to_string(),
            reason: format!("estimated shift ({tx}, {ty}) leaves no overlap"),
        },
        other => other,
    }
}

/// Fuses an in-memory stack. `images` pairs each image with a display name;
/// order is preserved and indexes the report.
pub fn run_stack(images: &[(String, Image)], cfg: &PipelineConfig) -> Result<(Image, RunReport)> {
    let run_start = Instant::now();
    cfg.validate()?;
    if images.len() < 2 {
        return Err(FuseError::InvalidConfig(format!("need at least two images, got {}", images.len())));
    }
    let (width, height) = images[0].1.dims();
    let channels = images[0].1.channels();
    for (_, img) in images {
        if img.dims() != (width, height) {
            return Err(FuseError::DimensionMismatch {
                expected: (width, height),
                actual: img.dims(),
            });
        }
        if img.channels() != channels {
            return Err(FuseError::UnsupportedChannels(img.channels()));
        }
    }
    let reference = match cfg.reference {
        ReferenceChoice::Index(i) if i >= images.len() => {
            return Err(FuseError::InvalidConfig(format!(
                "reference index {i} out of range for {} images",
                images.len()
            )))
        }
        ReferenceChoice::Index(i) => Some(i),
        ReferenceChoice::Auto => None,
    };

    let mut t = StageTimings::default();
    let distinct = cfg.scale_space().distinct_filter_sizes().len();
    let mut pool = BufferPool::new();
    let mut analyses = Vec::with_capacity(images.len());
    for (name, img) in images {
        analyses.push(analyze(name, img, cfg, &mut t, &mut pool)?);
    }
    let counts: Vec<usize> = analyses.iter().map(|a| a.keypoints.len()).collect();
    let reference = reference.unwrap_or_else(|| select_reference(&counts));

    let mut reports: Vec<ImageReport> = images
        .iter()
        .zip(&analyses)
        .map(|((name, _), a)| ImageReport {
            name: name.clone(),
            keypoints: a.keypoints.len(),
            descriptors: a.descriptors.len(),
            layers_computed: a.layers_computed,
            layers_distinct: distinct,
            registration: None,
            dropped: None,
        })
        .collect();
    reports[reference].registration = Some(RegistrationReport {
        tx: 0.0,
        ty: 0.0,
        shift: (0, 0),
        a_num: 0,
        v_num: 0,
        accuracy: None,
    });

    let mut models: Vec<Option<TranslationModel>> = vec![None; images.len()];
    for i in (0..images.len()).filter(|&i| i != reference) {
        let start = Instant::now();
        let best = match_top_k(
            &analyses[i].descriptors,
            &analyses[reference].descriptors,
            cfg.ratio_threshold,
            cfg.top_k,
        );
        t.matching += elapsed(start);

        let start = Instant::now();
        let voted = hough_vote(&best, cfg.cell_size, cfg.aggregation).and_then(|m| {
            let (tx, ty) = m.rounded();
            if tx.unsigned_abs() as usize >= width || ty.unsigned_abs() as usize >= height {
                Err(FuseError::TranslationOutOfRange { tx, ty, width, height })
            } else {
                Ok(m)
            }
        });
        t.voting += elapsed(start);

        match voted {
            Ok(model) => {
                let stats = model.stats();
                reports[i].registration = Some(RegistrationReport {
                    tx: model.tx,
                    ty: model.ty,
                    shift: model.rounded(),
                    a_num: stats.a_num,
                    v_num: stats.v_num,
                    accuracy: Some(stats.accuracy),
                });
                models[i] = Some(model);
            }
            Err(err) => {
                let err = registration_failure(&images[i].0, err);
                if !(cfg.skip_unregistrable && err.is_registration_failure()) {
                    return Err(err);
                }
                reports[i].dropped = Some(err.to_string());
            }
        }
    }

    // images that could not be registered take no part from here on
    let active: Vec<usize> = (0..images.len()).filter(|&i| reports[i].dropped.is_none()).collect();
    let ref_pos = active.iter().position(|&i| i == reference).expect("reference is active");
    let fused = if active.len() == 1 {
        images[reference].1.clone()
    } else {
        let start = Instant::now();
        let stack: Vec<Image> = active.iter().map(|&i| images[i].1.clone()).collect();
        let stack_models: Vec<Option<TranslationModel>> = active.iter().map(|&i| models[i].clone()).collect();
        let aligned = register_stack(&stack, ref_pos, &stack_models)?;
        let mut guides = Vec::with_capacity(active.len());
        let mut aligned_sal = Vec::with_capacity(active.len());
        for (&i, model) in active.iter().zip(&stack_models) {
            let model = model.clone().unwrap_or_else(TranslationModel::identity);
            aligned_sal.push(align_saliency(&analyses[i].saliency, &model)?);
            let gray = to_grayscale(&images[i].1)?;
            let (tx, ty) = model.rounded();
            guides.push(translate(&gray, tx, ty)?.0);
        }
        drop(analyses);
        t.warp += elapsed(start);

        let start = Instant::now();
        let binary = initial_weights(&aligned_sal)?;
        t.weights += elapsed(start);

        let start = Instant::now();
        let params = cfg.guided_filter();
        let refined = guides
            .iter()
            .zip(&binary)
            .map(|(g, w)| guided_filter_in(g, w, &params, &mut pool))
            .collect::<Result<Vec<_>>>()?;
        t.filter += elapsed(start);

        let start = Instant::now();
        let (aligned_images, masks): (Vec<Image>, Vec<_>) = aligned.into_iter().unzip();
        let fused = fuse(&aligned_images, &refined, &masks, ref_pos)?;
        t.fuse += elapsed(start);

        let start = Instant::now();
        for (k, &i) in active.iter().enumerate() {
            let stem = file_stem(&images[i].0);
            if let Some(dir) = &cfg.dumps.saliency {
                io::save_grid_normalized(&dir.join(format!("{stem}_saliency.png")), &aligned_sal[k].values)?;
            }
            if let Some(dir) = &cfg.dumps.weights {
                io::save_unit_grid(&dir.join(format!("{stem}_weights.png")), refined[k].grid())?;
            }
        }
        t.io += elapsed(start);
        fused
    };

    t.compute = t.stage_sum();
    t.total = elapsed(run_start);
    Ok((
        fused,
        RunReport {
            config: cfg.clone(),
            width,
            height,
            reference,
            images: reports,
            timings: t,
        },
    ))
}

/// Expands a directory into its images (sorted by file name); a list of
/// files is taken as given.
pub fn resolve_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    match inputs {
        [single] if single.is_dir() => io::list_images(single),
        _ => Ok(inputs.to_vec()),
    }
}

/// Loads `inputs` (a directory or explicit files) and fuses them.
pub fn run_pipeline(inputs: &[PathBuf], cfg: &PipelineConfig) -> Result<(Image, RunReport)> {
    let start = Instant::now();
    let paths = resolve_inputs(inputs)?;
    let images = paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            io::load_image(p).map(|img| (name, img))
        })
        .collect::<Result<Vec<_>>>()?;
    let load = elapsed(start);
    let (fused, mut report) = run_stack(&images, cfg)?;
    report.timings.io += load;
    report.timings.total += load;
    Ok((fused, report))
}

/// A swept parameter and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Octaves(Vec<usize>),
    Layers(Vec<usize>),
    Dim(Vec<usize>),
}

impl FromStr for SweepAxis {
    type Err = FuseError;

    /// Parses `name=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| FuseError::InvalidConfig(format!("axis must look like name=v1,v2, got '{s}'")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| FuseError::InvalidConfig(format!("bad value '{v}' for axis {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(FuseError::InvalidConfig(format!("axis {name} has no values")));
        }
        match name.trim() {
            "octaves" | "o" => Ok(SweepAxis::Octaves(values)),
            "layers" | "l" => Ok(SweepAxis::Layers(values)),
            "dim" | "descriptor_dim" => Ok(SweepAxis::Dim(values)),
            other => Err(FuseError::InvalidConfig(format!(
                "unknown sweep axis '{other}' (expected octaves, layers or dim)"
            ))),
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub octaves: usize,
    pub layers: usize,
    pub descriptor_dim: usize,
    pub mean_accuracy: Option<f64>,
    pub timings: StageTimings,
    pub output: Option<PathBuf>,
}

/// Configurations of the cartesian product of `axes` over `base`.
pub fn sweep_configs(base: &PipelineConfig, axes: &[SweepAxis]) -> Result<Vec<PipelineConfig>> {
    let mut configs = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::new();
        for cfg in &configs {
            let values = match axis {
                SweepAxis::Octaves(v) | SweepAxis::Layers(v) | SweepAxis::Dim(v) => v,
            };
            for &v in values {
                let mut c = cfg.clone();
                match axis {
                    SweepAxis::Octaves(_) => c.octaves = v,
                    SweepAxis::Layers(_) => c.layers = v,
                    SweepAxis::Dim(_) => c.descriptor_dim = v,
                }
                c.validate()?;
                next.push(c);
            }
        }
        configs = next;
    }
    Ok(configs)
}

/// Runs the pipeline at every grid point; fused images go to `out_dir`
/// when given.
pub fn sweep(
    images: &[(String, Image)],
    base: &PipelineConfig,
    axes: &[SweepAxis],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let configs = sweep_configs(base, axes)?;
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let (fused, report) = run_stack(images, &cfg)?;
        let output = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("fused_o{}_l{}_d{}.png", cfg.octaves, cfg.layers, cfg.descriptor_dim));
                io::save_image(&path, &fused)?;
                Some(path)
            }
            None => None,
        };
        rows.push(SweepRow {
            octaves: cfg.octaves,
            layers: cfg.layers,
            descriptor_dim: cfg.descriptor_dim,
            mean_accuracy: report.mean_accuracy(),
            timings: report.timings,
            output,
        });
    }
    Ok(rows)
}

/// CSV rendering of sweep rows, one line per grid point.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "octaves,layers,descriptor_dim,mean_accuracy,scale_space_s,detect_s,describe_s,saliency_s,\
         matching_s,voting_s,filter_s,fuse_s,compute_s,total_s,output\n",
    );
    for r in rows {
        let t = &r.timings;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.octaves,
            r.layers,
            r.descriptor_dim,
            r.mean_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            t.scale_space,
            t.detect,
            t.describe,
            t.saliency,
            t.matching,
            t.voting,
            t.filter,
            t.fuse,
            t.compute,
            t.total,
            r.output.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::procedural_base;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            octaves: 2,
            layers: 2,
            gf_radius: 8,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn defaults_are_the_operating_point() {
        let c = PipelineConfig::default();
        assert_eq!((c.octaves, c.layers, c.descriptor_dim, c.top_k), (5, 2, 64, 20));
        assert_eq!(c.ratio_threshold, 0.8);
        assert_eq!(c.cell_size, 4.0);
        assert_eq!(c.aggregation, Aggregation::L1);
        assert_eq!((c.gf_radius, c.gf_epsilon), (45, 0.3));
        assert_eq!(c.reference, ReferenceChoice::Auto);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let bad = [
            PipelineConfig { octaves: 0, ..Default::default() },
            PipelineConfig { layers: 9, ..Default::default() },
            PipelineConfig { descriptor_dim: 32, ..Default::default() },
            PipelineConfig { ratio_threshold: 0.0, ..Default::default() },
            PipelineConfig { top_k: 0, ..Default::default() },
            PipelineConfig { cell_size: -1.0, ..Default::default() },
            PipelineConfig { gf_epsilon: 0.0, ..Default::default() },
            PipelineConfig { gf_radius: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn parses_reference_and_axes() {
        assert_eq!("auto".parse::<ReferenceChoice>().unwrap(), ReferenceChoice::Auto);
        assert_eq!("2".parse::<ReferenceChoice>().unwrap(), ReferenceChoice::Index(2));
        assert!("x".parse::<ReferenceChoice>().is_err());
        assert_eq!("dim=16,36".parse::<SweepAxis>().unwrap(), SweepAxis::Dim(vec![16, 36]));
        assert_eq!("octaves=1".parse::<SweepAxis>().unwrap(), SweepAxis::Octaves(vec![1]));
        assert!("speed=1".parse::<SweepAxis>().is_err());
        assert!("dim".parse::<SweepAxis>().is_err());
        assert!("dim=a".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn sweep_grid_is_cartesian_and_validated() {
        let base = PipelineConfig::default();
        let axes = vec![SweepAxis::Octaves(vec![1, 2, 3]), SweepAxis::Dim(vec![16, 64])];
        let configs = sweep_configs(&base, &axes).unwrap();
        assert_eq!(configs.len(), 6);
        assert_eq!((configs[5].octaves, configs[5].descriptor_dim), (3, 64));
        assert!(sweep_configs(&base, &[SweepAxis::Dim(vec![20])]).is_err());
        assert_eq!(sweep_configs(&base, &[]).unwrap(), vec![base]);
    }

    #[test]
    fn identical_pair_fuses_to_itself() {
        let img = procedural_base(96, 96, 3);
        let images = vec![("a".to_string(), img.clone()), ("b".to_string(), img.clone())];
        let (fused, report) = run_stack(&images, &small_cfg()).unwrap();
        assert_eq!(fused, img);
        let reg = report.images[1].registration.as_ref().unwrap();
        assert_eq!(reg.shift, (0, 0));
        assert_eq!((reg.tx, reg.ty), (0.0, 0.0));
        assert_eq!(report.reference, 0);
        for entry in &report.images {
            assert_eq!(entry.layers_computed, entry.layers_distinct);
        }
        assert!(report.timings.stage_sum() <= report.timings.total);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = procedural_base(96, 96, 1);
        let b = procedural_base(96, 97, 1);
        let images = vec![("a".to_string(), a.clone()), ("b".to_string(), b)];
        assert!(matches!(run_stack(&images, &small_cfg()), Err(FuseError::DimensionMismatch { .. })));
        assert!(run_stack(&images[..1], &small_cfg()).is_err());
        let cfg = PipelineConfig {
            reference: ReferenceChoice::Index(5),
            ..small_cfg()
        };
        let pair = vec![("a".to_string(), a.clone()), ("b".to_string(), a)];
        assert!(run_stack(&pair, &cfg).is_err());
    }

    #[test]
    fn unregistrable_image_aborts_or_is_dropped() {
        let a = procedural_base(96, 96, 1);
        let flat = Image::from_fn(96, 96, |_, _| 0.5);
        let images = vec![
            ("a.png".to_string(), a.clone()),
            ("b.png".to_string(), a.clone()),
            ("flat.png".to_string(), flat),
        ];
        match run_stack(&images, &small_cfg()) {
            Err(FuseError::RegistrationFailed { image, .. }) => assert_eq!(image, "flat.png"),
            other => panic!("expected registration failure, got {other:?}"),
        }
        let cfg = PipelineConfig {
            skip_unregistrable: true,
            ..small_cfg()
        };
        let (fused, report) = run_stack(&images, &cfg).unwrap();
        assert!(report.images[2].dropped.is_some());
        assert!(report.images[2].registration.is_none());
        assert_eq!(fused, a);
    }

    #[test]
    fn sweep_rows_render_as_csv() {
        let img = procedural_base(96, 96, 3);
        let images = vec![("a".to_string(), img.clone()), ("b".to_string(), img)];
        let rows = sweep(&images, &small_cfg(), &[SweepAxis::Dim(vec![16, 36])], None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mean_accuracy, Some(1.0));
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("2,2,16,1,"));
    }
}
