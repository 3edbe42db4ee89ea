//! Slide-level prediction and analysis: confidence-map stitching, top-q%
//! confident-tile aggregation and attention-MIL pooling.

pub mod mil;

use crate::error::{Error, Result};
use crate::measures::confidence;
use crate::methods::PredictionSet;

pub use mil::{
    slide_ensemble_predictions, slide_mcdo_predictions, train_mil, AttentionMILHead, Bag,
    MilTrainConfig,
};

/// Tumor-probability grid of one slide; `None` marks cells without a
/// prediction (excluded or missing tiles).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub slide_id: u32,
    pub width: usize,
    pub height: usize,
    cells: Vec<Option<f64>>,
}

impl ConfidenceMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.cells[y * self.width + x]
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }
}

/// Place per-tile tumor probabilities on the slide grid. Cells without a
/// tile keep the sentinel; duplicate coordinates are an error.
pub fn stitch_confidence_map(
    slide_id: u32,
    width: usize,
    height: usize,
    tiles: &[(usize, usize, f64)],
) -> Result<ConfidenceMap> {
    let mut cells = vec![None; width * height];
    for &(x, y, p) in tiles {
        if x >= width || y >= height {
            return Err(Error::invalid(format!(
                "tile ({x}, {y}) outside {width}x{height} grid"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "tumor probability {p} outside [0, 1]"
            )));
        }
        let cell = &mut cells[y * width + x];
        if cell.is_some() {
            return Err(Error::invalid(format!("duplicate tile at ({x}, {y})")));
        }
        *cell = Some(p);
    }
    Ok(ConfidenceMap {
        slide_id,
        width,
        height,
        cells,
    })
}

/// Slide-level probability vector with an uncertainty scalar.
#[derive(Debug, Clone)]
pub struct SlidePrediction {
    pub slide_id: u32,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub method_tag: String,
}

/// Average the mean predictions of the ceil(q * n) most confident tiles of
/// one slide; uncertainty is 1 minus the confidence of the average.
pub fn aggregate_top_q(tile_set: &PredictionSet, q: f64) -> Result<SlidePrediction> {
    if tile_set.is_empty() {
        return Err(Error::invalid("aggregate_top_q: empty slide"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("q must lie in (0, 1], got {q}")));
    }
    let slide_id = tile_set.meta()[0].slide_id;
    if tile_set.meta().iter().any(|m| m.slide_id != slide_id) {
        return Err(Error::invalid(
            "aggregate_top_q: tiles from multiple slides",
        ));
    }
    let n = tile_set.len();
    let take = ((q * n as f64).ceil() as usize).clamp(1, n);

    let means: Vec<Vec<f64>> = (0..n).map(|i| tile_set.mean_prediction(i)).collect();
    let confidences: Vec<f64> = means.iter().map(|m| confidence(m)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].partial_cmp(&confidences[a]).unwrap());

    let classes = means[0].len();
    let mut avg = vec![0.0; classes];
    for &i in &order[..take] {
        for (acc, v) in avg.iter_mut().zip(&means[i]) {
            *acc += v / take as f64;
        }
    }
    let uncertainty = 1.0 - confidence(&avg)?;
    Ok(SlidePrediction {
        slide_id,
        probs: avg,
        uncertainty,
        method_tag: format!("{}_top_q", tile_set.method_tag),
    })
}
