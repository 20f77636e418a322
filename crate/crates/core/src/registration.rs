//! Reference selection, Hough-grid translation voting and stack alignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::matching::{Match, MatchStats};
use crate::raster::{translate, Image, ValidityMask};

pub const DEFAULT_CELL_SIZE: f64 = 4.0;

/// How inlier displacements are reduced to one translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Componentwise median (least absolute deviations).
    #[default]
    L1,
    /// Componentwise mean (least squares).
    L2,
}

impl std::str::FromStr for Aggregation {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "median" => Ok(Aggregation::L1),
            "l2" | "mean" => Ok(Aggregation::L2),
            other => Err(FuseError::InvalidConfig(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Index of the image with the most keypoints; ties go to the lowest index.
pub fn select_reference(keypoint_counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in keypoint_counts.iter().enumerate() {
        if c > keypoint_counts[best] {
            best = i;
        }
    }
    best
}

/// Displacement votes binned into square cells of side `cell_size`.
#[derive(Debug, Clone)]
pub struct VoteGrid {
    pub cell_size: f64,
    pub cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl VoteGrid {
    pub fn new(matches: &[Match], cell_size: f64) -> Self {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, m) in matches.iter().enumerate() {
            cells.entry(cell_of(m.displacement(), cell_size)).or_default().push(i);
        }
        Self { cell_size, cells }
    }

    /// Most-voted cell; ties prefer the centre closest to the origin, then the
    /// lexicographically smallest index.
    pub fn winner(&self) -> Option<((i64, i64), &[usize])> {
        let centre_norm = |&(cx, cy): &(i64, i64)| {
            let x = (cx as f64 + 0.5) * self.cell_size;
            let y = (cy as f64 + 0.5) * self.cell_size;
            x * x + y * y
        };
        self.cells
            .iter()
            .min_by(|(ka, va), (kb, vb)| {
                vb.len()
                    .cmp(&va.len())
                    .then(centre_norm(ka).total_cmp(&centre_norm(kb)))
                    .then(ka.cmp(kb))
            })
            .map(|(k, v)| (*k, v.as_slice()))
    }
}

/// Distance, in cell units, within which a displacement counts as lying on a
/// cell boundary. Displacements that are exact multiples of the cell size
/// arrive with rounding noise of either sign from subpixel refinement; without
/// the snap a single true shift would split its votes across two cells.
const BOUNDARY_SNAP: f64 = 1e-9;

fn bin(v: f64, cell_size: f64) -> i64 {
    let q = v / cell_size;
    let edge = q.round();
    if (q - edge).abs() <= BOUNDARY_SNAP {
        edge as i64
    } else {
        q.floor() as i64
    }
}

fn cell_of((dx, dy): (f64, f64), cell_size: f64) -> (i64, i64) {
    (bin(dx, cell_size), bin(dy, cell_size))
}

/// Translation mapping sensed coordinates into the reference frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationModel {
    pub tx: f64,
    pub ty: f64,
    pub inliers: Vec<Match>,
    pub cell: (i64, i64),
    pub aggregation: Aggregation,
    /// Number of matches that voted.
    pub votes: usize,
}

impl TranslationModel {
    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            inliers: Vec::new(),
            cell: (0, 0),
            aggregation: Aggregation::L1,
            votes: 0,
        }
    }

    /// Integer shift applied when warping.
    pub fn rounded(&self) -> (i64, i64) {
        (self.tx.round() as i64, self.ty.round() as i64)
    }

    pub fn stats(&self) -> MatchStats {
        MatchStats::new(self.votes, self.inliers.len())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Votes each match's displacement into a grid cell and aggregates the
/// members of the most-voted cell.
pub fn hough_vote(matches: &[Match], cell_size: f64, aggregation: Aggregation) -> Result<TranslationModel> {
    if cell_size.is_nan() || cell_size <= 0.0 {
        return Err(FuseError::InvalidConfig(format!("cell size must be positive, got {cell_size}")));
    }
    let grid = VoteGrid::new(matches, cell_size);
    let (cell, members) = grid.winner().ok_or_else(|| FuseError::RegistrationFailed {
        image: String::new(),
        reason: "no matched pairs to vote with".into(),
    })?;
    let mut inliers: Vec<Match> = members.iter().map(|&i| matches[i]).collect();
    inliers.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.sensed.cmp(&b.sensed))
            .then(a.reference.cmp(&b.reference))
    });
    let mut dx: Vec<f64> = inliers.iter().map(|m| m.displacement().0).collect();
    let mut dy: Vec<f64> = inliers.iter().map(|m| m.displacement().1).collect();
    let (tx, ty) = match aggregation {
        Aggregation::L1 => (median(&mut dx), median(&mut dy)),
        Aggregation::L2 => {
            let n = dx.len() as f64;
            (dx.iter().sum::<f64>() / n, dy.iter().sum::<f64>() / n)
        }
    };
    Ok(TranslationModel {
        tx,
        ty,
        inliers,
        cell,
        aggregation,
        votes: matches.len(),
    })
}

/// Warps every sensed image into the reference frame. `models[i]` must be
/// `None` exactly for the reference image.
pub fn register_stack(
    images: &[Image],
    reference: usize,
    models: &[Option<TranslationModel>],
) -> Result<Vec<(Image, ValidityMask)>> {
    if models.len() != images.len() || reference >= images.len() {
        return Err(FuseError::InvalidConfig(format!(
            "expected {} models with reference {reference} in range",
            images.len()
        )));
    }
    images
        .iter()
        .zip(models)
        .enumerate()
        .map(|(i, (img, model))| match (i == reference, model) {
            (true, _) => Ok((img.clone(), ValidityMask::full(img.width(), img.height()))),
            (false, Some(m)) => {
                let (tx, ty) = m.rounded();
                translate(img, tx, ty)
            }
            (false, None) => Err(FuseError::InvalidConfig(format!("missing model for image {i}"))),
        })
        .collect()
}
