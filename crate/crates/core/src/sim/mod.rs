//! Deterministic synthetic whole-slide generator.
//!
//! A slide is a W x H grid of tiles with polygonal tumor annotations. Tile
//! features are drawn from a coverage-blended mixture of class-conditional
//! Gaussians and then pushed through a per-center scanner transform, which is
//! what creates the domain shift between clinics. Everything is reproducible
//! from the master seed.

pub mod polygon;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use polygon::{compute_coverage, Polygon};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const NUM_CENTERS: u8 = 5;

/// Scanner used by each clinic: centers 0, 1 and 3 share scanner 0, center 2
/// uses scanner 1 and center 4 scanner 2. Under the weak split the OOD
/// centers therefore reuse an ID scanner; under the strong split the OOD
/// scanners are absent from the ID data.
pub const SCANNER_FOR_CENTER: [u8; 5] = [0, 0, 1, 0, 2];

#[derive(Debug, Clone)]
pub struct SlideSpec {
    pub slide_id: u32,
    pub center_id: u8,
    pub grid_w: usize,
    pub grid_h: usize,
    pub polygons: Vec<Polygon>,
    pub slide_label: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileLabel {
    NonTumor,
    Tumor,
    Excluded,
}

impl TileLabel {
    /// CSV encoding: 0 non-tumor, 1 tumor, -1 excluded.
    pub fn to_code(self) -> i8 {
        match self {
            TileLabel::NonTumor => 0,
            TileLabel::Tumor => 1,
            TileLabel::Excluded => -1,
        }
    }

    pub fn from_code(code: i8) -> Result<Self> {
        match code {
            0 => Ok(TileLabel::NonTumor),
            1 => Ok(TileLabel::Tumor),
            -1 => Ok(TileLabel::Excluded),
            other => Err(Error::invalid(format!("unknown tile label code {other}"))),
        }
    }

    pub fn as_class(self) -> Option<usize> {
        match self {
            TileLabel::NonTumor => Some(0),
            TileLabel::Tumor => Some(1),
            TileLabel::Excluded => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TileRecord {
    pub features: Vec<f64>,
    pub label: TileLabel,
    pub coverage: f64,
    /// Coverage strictly between 0 and 1: the tile sits on an annotation border.
    pub border: bool,
    pub slide_id: u32,
    pub center_id: u8,
    pub x: usize,
    pub y: usize,
}

/// Affine feature transform of one clinic's scanner plus staining habits.
#[derive(Debug, Clone)]
pub struct CenterProfile {
    pub center_id: u8,
    pub scanner_id: u8,
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise_sigma: f64,
}

impl CenterProfile {
    pub fn identity(center_id: u8, feature_dim: usize) -> Self {
        CenterProfile {
            center_id,
            scanner_id: SCANNER_FOR_CENTER[center_id as usize % 5],
            gain: vec![1.0; feature_dim],
            offset: vec![0.0; feature_dim],
            noise_sigma: 0.0,
        }
    }

    /// Canonical profile for a center: the scanner sets gain/offset patterns,
    /// the clinic adds a small staining offset.
    pub fn for_center(center_id: u8, feature_dim: usize) -> Result<Self> {
        if center_id >= NUM_CENTERS {
            return Err(Error::invalid(format!("center {center_id} out of range")));
        }
        let scanner_id = SCANNER_FOR_CENTER[center_id as usize];
        let mut gain = Vec::with_capacity(feature_dim);
        let mut offset = Vec::with_capacity(feature_dim);
        for j in 0..feature_dim {
            let alt = if j % 2 == 0 { 1.0 } else { -1.0 };
            let (g, o) = match scanner_id {
                0 => (1.0, 0.0),
                1 => (1.0 + 0.18 * alt, 0.30 * alt),
                _ => (1.0 - 0.12 * alt, -0.25 * alt),
            };
            let clinic =
                0.08 * (center_id as f64 - 2.0) * if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
            gain.push(g);
            offset.push(o + clinic);
        }
        Ok(CenterProfile {
            center_id,
            scanner_id,
            gain,
            offset,
            noise_sigma: 0.05,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain.iter().any(|&g| g <= 0.0) {
            return Err(Error::invalid("center profile: gains must be positive"));
        }
        if self.gain.len() != self.offset.len() {
            return Err(Error::shape("center profile: gain/offset length mismatch"));
        }
        Ok(())
    }

    pub fn apply(&self, features: &mut [f64], rng: &mut Rng) {
        for (j, f) in features.iter_mut().enumerate() {
            let noise: f64 = if self.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                self.noise_sigma * z
            } else {
                0.0
            };
            *f = self.gain[j] * *f + self.offset[j] + noise;
        }
    }
}

/// Class-conditional feature means: separated by `separation` along the
/// all-ones diagonal, with unit isotropic noise added at generation time.
pub fn class_means(feature_dim: usize, separation: f64) -> (Vec<f64>, Vec<f64>) {
    let half = separation / 2.0 / (feature_dim as f64).sqrt();
    (vec![-half; feature_dim], vec![half; feature_dim])
}

/// Default coverage threshold: more than 25% tumor coverage counts as tumor.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.25;

/// Generate all tiles of one slide. Features are deterministic given
/// `spec.seed`; labels are assigned at the default coverage threshold and can
/// be re-assigned with [`label_tiles`].
pub fn generate_slide(
    spec: &SlideSpec,
    profile: &CenterProfile,
    feature_dim: usize,
    separation: f64,
) -> Result<Vec<TileRecord>> {
    profile.validate()?;
    if profile.gain.len() != feature_dim {
        return Err(Error::shape("profile feature width does not match"));
    }
    if spec.grid_w == 0 || spec.grid_h == 0 {
        return Err(Error::invalid("slide grid must be at least 1x1"));
    }
    for p in &spec.polygons {
        let (x0, y0, x1, y1) = p.bounds();
        if x0 < 0.0 || y0 < 0.0 || x1 > spec.grid_w as f64 || y1 > spec.grid_h as f64 {
            return Err(Error::invalid(format!(
                "slide {}: polygon leaves the grid",
                spec.slide_id
            )));
        }
    }
    let (healthy, tumor) = class_means(feature_dim, separation);
    let mut rng = rng_from_seed(spec.seed);
    let mut tiles = Vec::with_capacity(spec.grid_w * spec.grid_h);
    for y in 0..spec.grid_h {
        for x in 0..spec.grid_w {
            let coverage = compute_coverage(x, y, &spec.polygons)?;
            let mut features = Vec::with_capacity(feature_dim);
            for j in 0..feature_dim {
                let mean = coverage * tumor[j] + (1.0 - coverage) * healthy[j];
                let z: f64 = rng.sample(StandardNormal);
                features.push(mean + z);
            }
            profile.apply(&mut features, &mut rng);
            tiles.push(TileRecord {
                features,
                label: TileLabel::Excluded,
                coverage,
                border: coverage > 0.0 && coverage < 1.0,
                slide_id: spec.slide_id,
                center_id: spec.center_id,
                x,
                y,
            });
        }
    }
    label_tiles(&mut tiles, DEFAULT_COVERAGE_THRESHOLD)?;
    Ok(tiles)
}

/// Label tiles from their coverage: tumor above the threshold, non-tumor at
/// exactly zero, excluded in between. With `tau = 0` nothing is excluded.
pub fn label_tiles(tiles: &mut [TileRecord], tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!(
            "coverage threshold must lie in [0, 1), got {tau}"
        )));
    }
    for t in tiles {
        t.label = if t.coverage > tau {
            TileLabel::Tumor
        } else if t.coverage == 0.0 {
            TileLabel::NonTumor
        } else {
            TileLabel::Excluded
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Weak,
    Strong,
    LeaveOneOut(u8),
}

impl SplitKind {
    pub fn id_centers(&self) -> Vec<u8> {
        match self {
            SplitKind::Weak => vec![0, 2, 4],
            SplitKind::Strong => vec![0, 1, 3],
            SplitKind::LeaveOneOut(c) => (0..NUM_CENTERS).filter(|x| x != c).collect(),
        }
    }

    pub fn ood_centers(&self) -> Vec<u8> {
        let id = self.id_centers();
        (0..NUM_CENTERS).filter(|c| !id.contains(c)).collect()
    }

    pub fn name(&self) -> String {
        match self {
            SplitKind::Weak => "weak".to_string(),
            SplitKind::Strong => "strong".to_string(),
            SplitKind::LeaveOneOut(c) => format!("loo{c}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Fraction of non-test ID tiles that goes to training (rest to validation).
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(kind: SplitKind, seed: u64) -> Self {
        SplitSpec {
            kind,
            train_fraction: 0.75,
            seed,
        }
    }
}

/// Tile indices per partition, over the dataset's tile vector. Excluded
/// tiles are left out of every partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub kind: String,
    pub id_centers: Vec<u8>,
    pub ood_centers: Vec<u8>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_ood: Vec<usize>,
    /// Slide ids serving as ID test slides, per the median-slide rule.
    pub test_slides: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideInfo {
    pub slide_id: u32,
    pub center_id: u8,
    pub slide_label: u8,
    /// Total annotated tumor area in tile units (sum of tile coverages).
    pub tumor_area: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_dim: usize,
    pub tiles: Vec<TileRecord>,
    pub slides: Vec<SlideInfo>,
}

impl Dataset {
    /// Indices of one slide's tiles, in generation order.
    pub fn slide_tiles(&self, slide_id: u32) -> Vec<usize> {
        self.tiles
            .iter()
            .enumerate()
            .filter(|(_, t)| t.slide_id == slide_id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Partition tiles into train/val/test-ID/test-OOD.
///
/// Per ID center the slides are sorted by annotated tumor area and the two
/// median slides (0-based indices ceil(m/2)-1 and ceil(m/2)) become the ID
/// test set; the remaining ID tiles are shuffled with the split seed and cut
/// at `train_fraction`. All OOD-center slides form the OOD test set.
pub fn make_split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitManifest> {
    let id_centers = spec.kind.id_centers();
    let ood_centers = spec.kind.ood_centers();
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::invalid("train_fraction must lie in [0, 1]"));
    }

    let mut test_slides: Vec<u32> = Vec::new();
    for &center in &id_centers {
        let mut slides: Vec<&SlideInfo> = dataset
            .slides
            .iter()
            .filter(|s| s.center_id == center)
            .collect();
        if slides.len() < 3 {
            return Err(Error::invalid(format!(
                "center {center} has {} slides; need >= 3 for the median-slide rule",
                slides.len()
            )));
        }
        slides.sort_by(|a, b| {
            a.tumor_area
                .partial_cmp(&b.tumor_area)
                .unwrap()
                .then(a.slide_id.cmp(&b.slide_id))
        });
        let m = slides.len();
        let first = m.div_ceil(2) - 1;
        test_slides.push(slides[first].slide_id);
        test_slides.push(slides[first + 1].slide_id);
    }
    test_slides.sort_unstable();

    let mut pool = Vec::new();
    let mut test_id = Vec::new();
    let mut test_ood = Vec::new();
    for (i, tile) in dataset.tiles.iter().enumerate() {
        if tile.label == TileLabel::Excluded {
            continue;
        }
        if ood_centers.contains(&tile.center_id) {
            test_ood.push(i);
        } else if test_slides.binary_search(&tile.slide_id).is_ok() {
            test_id.push(i);
        } else {
            pool.push(i);
        }
    }

    let mut rng = rng_from_seed(spec.seed);
    use rand::seq::SliceRandom;
    pool.shuffle(&mut rng);
    let n_train = (pool.len() as f64 * spec.train_fraction).floor() as usize;
    let mut train: Vec<usize> = pool[..n_train].to_vec();
    let mut val: Vec<usize> = pool[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();

    Ok(SplitManifest {
        kind: spec.kind.name(),
        id_centers,
        ood_centers,
        train,
        val,
        test_id,
        test_ood,
        test_slides,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Original dataset, 25% coverage threshold; no label changes.
    Threshold25,
    /// 0% coverage threshold: every partially covered tile counts as tumor.
    Threshold0,
    /// Uniform label flips on the training tiles of the 0% dataset.
    Uniform,
    /// Flips of partially covered tumor tiles on the 0% dataset.
    Border,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Threshold25 => "25%",
            NoiseKind::Threshold0 => "0%",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Border => "border",
        }
    }

    pub fn coverage_threshold(&self) -> f64 {
        match self {
            NoiseKind::Threshold25 => DEFAULT_COVERAGE_THRESHOLD,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub flip_prob: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        NoiseSpec {
            kind,
            flip_prob: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Flip each training tile's binary label independently with `flip_prob`.
/// Only the given indices (the training partition) are touched.
pub fn inject_uniform_noise(
    tiles: &mut [TileRecord],
    train_indices: &[usize],
    flip_prob: f64,
    rng: &mut Rng,
) -> Result<usize> {
    let mut flipped = 0;
    for &i in train_indices {
        let label = tiles[i].label;
        let new = match label {
            TileLabel::Tumor => TileLabel::NonTumor,
            TileLabel::NonTumor => TileLabel::Tumor,
            TileLabel::Excluded => {
                return Err(Error::invalid(
                    "uniform noise requires binary labels; found an excluded tile",
                ))
            }
        };
        if rng.gen::<f64>() < flip_prob {
            tiles[i].label = new;
            flipped += 1;
        }
    }
    Ok(flipped)
}

/// Flip tumor tiles that are not fully covered (label 1, coverage < 1) to
/// non-tumor with `flip_prob`; every other tile is untouched.
pub fn inject_border_noise(
    tiles: &mut [TileRecord],
    train_indices: &[usize],
    flip_prob: f64,
    rng: &mut Rng,
) -> Result<usize> {
    let mut flipped = 0;
    for &i in train_indices {
        let t = &mut tiles[i];
        if t.label == TileLabel::Tumor && t.coverage < 1.0 && rng.gen::<f64>() < flip_prob {
            t.label = TileLabel::NonTumor;
            flipped += 1;
        }
    }
    Ok(flipped)
}

/// Class-balanced batch stream over training tiles: batches of dataset tile
/// indices sampled with replacement so both classes appear in equal
/// expectation.
pub fn balanced_batches(
    tiles: &[TileRecord],
    train_indices: &[usize],
    batch_size: usize,
    num_batches: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in train_indices {
        match tiles[i].label.as_class() {
            Some(c) => by_class[c].push(i),
            None => {
                return Err(Error::invalid(
                    "balanced batches require labeled (non-excluded) tiles",
                ))
            }
        }
    }
    if by_class[0].is_empty() || by_class[1].is_empty() {
        return Err(Error::invalid(
            "balanced batches require both classes present",
        ));
    }
    Ok((0..num_batches)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    let class = &by_class[rng.gen_range(0..2usize)];
                    class[rng.gen_range(0..class.len())]
                })
                .collect()
        })
        .collect())
}

/// Declarative description of a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub slides_per_center: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Fraction of slides per center that carry tumor annotations.
    pub tumor_slide_fraction: f64,
    /// Distance between class-conditional feature means.
    pub class_separation: f64,
    pub coverage_threshold: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            slides_per_center: 6,
            grid_w: 24,
            grid_h: 24,
            feature_dim: 8,
            seed: 0,
            tumor_slide_fraction: 2.0 / 3.0,
            class_separation: 2.0,
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slides_per_center < 3 {
            return Err(Error::invalid("need >= 3 slides per center"));
        }
        if self.grid_w < 4 || self.grid_h < 4 {
            return Err(Error::invalid("grid must be at least 4x4"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tumor_slide_fraction) {
            return Err(Error::invalid("tumor_slide_fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.coverage_threshold) {
            return Err(Error::invalid("coverage_threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Generate the full multi-center dataset: per center,
/// `tumor_slide_fraction` of the slides carry 1-3 random star-shaped tumor
/// polygons and the rest are tumor-free. Deterministic per seed, with
/// per-slide seeds derived from the master seed.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut tiles = Vec::new();
    let mut slides = Vec::new();
    let tumor_slides = (cfg.tumor_slide_fraction * cfg.slides_per_center as f64).round() as usize;
    for center in 0..NUM_CENTERS {
        let profile = CenterProfile::for_center(center, cfg.feature_dim)?;
        for s in 0..cfg.slides_per_center {
            let slide_id = center as u32 * cfg.slides_per_center as u32 + s as u32;
            let seed = derive_seed(cfg.seed, slide_id as u64);
            let with_tumor = s < tumor_slides;
            let polygons = if with_tumor {
                let mut poly_rng = rng_from_seed(derive_seed(seed, 0xA11));
                random_annotations(&mut poly_rng, cfg.grid_w, cfg.grid_h)?
            } else {
                Vec::new()
            };
            let spec = SlideSpec {
                slide_id,
                center_id: center,
                grid_w: cfg.grid_w,
                grid_h: cfg.grid_h,
                polygons,
                slide_label: u8::from(with_tumor),
                seed,
            };
            let mut slide_tiles =
                generate_slide(&spec, &profile, cfg.feature_dim, cfg.class_separation)?;
            label_tiles(&mut slide_tiles, cfg.coverage_threshold)?;
            let tumor_area: f64 = slide_tiles.iter().map(|t| t.coverage).sum();
            slides.push(SlideInfo {
                slide_id,
                center_id: center,
                slide_label: spec.slide_label,
                tumor_area,
            });
            tiles.extend(slide_tiles);
        }
    }
    Ok(Dataset {
        feature_dim: cfg.feature_dim,
        tiles,
        slides,
    })
}

/// 1-3 star-shaped simple polygons that fit the grid with a margin.
fn random_annotations(rng: &mut Rng, grid_w: usize, grid_h: usize) -> Result<Vec<Polygon>> {
    let count = rng.gen_range(1..=3usize);
    let max_r = (grid_w.min(grid_h) as f64 / 3.5).max(1.5);
    let mut polygons = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.gen_range(1.5..max_r.max(1.6));
        let margin = 1.25 * r + 0.5;
        let cx = rng.gen_range(margin..grid_w as f64 - margin);
        let cy = rng.gen_range(margin..grid_h as f64 - margin);
        let k = rng.gen_range(6..12usize);
        let mut pts = Vec::with_capacity(k);
        for i in 0..k {
            let theta = (i as f64 + 0.7 * rng.gen::<f64>()) / k as f64 * std::f64::consts::TAU;
            let rho = r * (0.55 + 0.65 * rng.gen::<f64>());
            pts.push((cx + rho * theta.cos(), cy + rho * theta.sin()));
        }
        polygons.push(Polygon::new(pts)?);
    }
    Ok(polygons)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(polygons: Vec<Polygon>, seed: u64) -> SlideSpec {
        SlideSpec {
            slide_id: 0,
            center_id: 0,
            grid_w: 8,
            grid_h: 8,
            polygons,
            slide_label: 1,
            seed,
        }
    }

    #[test]
    fn no_polygons_all_non_tumor() {
        let profile = CenterProfile::identity(0, 4);
        let tiles = generate_slide(&spec_with(vec![], 1), &profile, 4, 2.0).unwrap();
        assert_eq!(tiles.len(), 64);
        assert!(tiles.iter().all(|t| t.coverage == 0.0));
        assert!(tiles.iter().all(|t| t.label == TileLabel::NonTumor));
        assert!(tiles.iter().all(|t| !t.border));
    }

    #[test]
    fn full_cover_polygon_all_tumor() {
        let p = Polygon::rectangle(0.0, 0.0, 8.0, 8.0).unwrap();
        let profile = CenterProfile::identity(0, 4);
        let tiles = generate_slide(&spec_with(vec![p], 1), &profile, 4, 2.0).unwrap();
        assert!(tiles.iter().all(|t| t.coverage == 1.0));
        assert!(tiles.iter().all(|t| t.label == TileLabel::Tumor));
    }

    #[test]
    fn profile_transform_is_exact_affine() {
        let base = CenterProfile::identity(0, 4);
        let mut shifted = CenterProfile::identity(0, 4);
        shifted.gain = vec![2.0, 0.5, 1.0, 3.0];
        shifted.offset = vec![0.1, -0.2, 0.0, 5.0];
        let spec = spec_with(vec![], 9);
        let a = generate_slide(&spec, &base, 4, 2.0).unwrap();
        let b = generate_slide(&spec, &shifted, 4, 2.0).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            for j in 0..4 {
                let expect = shifted.gain[j] * ta.features[j] + shifted.offset[j];
                assert!((tb.features[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let cfg = GeneratorConfig {
            slides_per_center: 3,
            grid_w: 8,
            grid_h: 8,
            ..GeneratorConfig::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.tiles.len(), b.tiles.len());
        for (x, y) in a.tiles.iter().zip(&b.tiles) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.label, y.label);
            assert_eq!(x.coverage, y.coverage);
        }
    }

    #[test]
    fn polygon_out_of_bounds_rejected() {
        let p = Polygon::rectangle(-1.0, 0.0, 4.0, 4.0).unwrap();
        let profile = CenterProfile::identity(0, 4);
        assert!(generate_slide(&spec_with(vec![p], 1), &profile, 4, 2.0).is_err());
    }

    #[test]
    fn label_thresholds() {
        let mut tiles = vec![
            tile_with_coverage(0.30),
            tile_with_coverage(0.10),
            tile_with_coverage(0.0),
            tile_with_coverage(0.25),
        ];
        label_tiles(&mut tiles, 0.25).unwrap();
        assert_eq!(tiles[0].label, TileLabel::Tumor);
        assert_eq!(tiles[1].label, TileLabel::Excluded);
        assert_eq!(tiles[2].label, TileLabel::NonTumor);
        // exactly tau is NOT strictly greater: excluded
        assert_eq!(tiles[3].label, TileLabel::Excluded);

        label_tiles(&mut tiles, 0.0).unwrap();
        assert_eq!(tiles[1].label, TileLabel::Tumor);
        assert_eq!(tiles[2].label, TileLabel::NonTumor);
        assert_eq!(tiles[3].label, TileLabel::Tumor);

        assert!(label_tiles(&mut tiles, 1.0).is_err());
    }

    fn tile_with_coverage(coverage: f64) -> TileRecord {
        TileRecord {
            features: vec![0.0; 2],
            label: TileLabel::Excluded,
            coverage,
            border: coverage > 0.0 && coverage < 1.0,
            slide_id: 0,
            center_id: 0,
            x: 0,
            y: 0,
        }
    }

    #[test]
    fn split_kinds_match_center_assignments() {
        assert_eq!(SplitKind::Weak.id_centers(), vec![0, 2, 4]);
        assert_eq!(SplitKind::Weak.ood_centers(), vec![1, 3]);
        assert_eq!(SplitKind::Strong.id_centers(), vec![0, 1, 3]);
        assert_eq!(SplitKind::Strong.ood_centers(), vec![2, 4]);
        assert_eq!(SplitKind::LeaveOneOut(3).id_centers(), vec![0, 1, 2, 4]);
        assert_eq!(SplitKind::LeaveOneOut(3).ood_centers(), vec![3]);
    }

    fn small_dataset() -> Dataset {
        generate_dataset(&GeneratorConfig {
            slides_per_center: 4,
            grid_w: 8,
            grid_h: 8,
            seed: 5,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_partitions_every_labeled_tile_exactly_once() {
        let data = small_dataset();
        let manifest = make_split(&data, &SplitSpec::new(SplitKind::Weak, 3)).unwrap();
        let mut seen = vec![0usize; data.tiles.len()];
        for &i in manifest
            .train
            .iter()
            .chain(&manifest.val)
            .chain(&manifest.test_id)
            .chain(&manifest.test_ood)
        {
            seen[i] += 1;
        }
        for (i, tile) in data.tiles.iter().enumerate() {
            let expected = usize::from(tile.label != TileLabel::Excluded);
            assert_eq!(seen[i], expected, "tile {i}");
        }
    }

    #[test]
    fn split_test_slides_follow_median_rule() {
        let data = small_dataset();
        let manifest = make_split(&data, &SplitSpec::new(SplitKind::Weak, 3)).unwrap();
        // two median slides per ID center
        assert_eq!(manifest.test_slides.len(), 6);
        for &center in &manifest.id_centers {
            let mut slides: Vec<&SlideInfo> = data
                .slides
                .iter()
                .filter(|s| s.center_id == center)
                .collect();
            slides.sort_by(|a, b| a.tumor_area.partial_cmp(&b.tumor_area).unwrap());
            let m = slides.len();
            let expect = [
                slides[m.div_ceil(2) - 1].slide_id,
                slides[m.div_ceil(2)].slide_id,
            ];
            for id in expect {
                assert!(manifest.test_slides.contains(&id));
            }
        }
        // OOD tiles come only from OOD centers
        for &i in &manifest.test_ood {
            assert!(manifest.ood_centers.contains(&data.tiles[i].center_id));
        }
    }

    #[test]
    fn split_is_deterministic() {
        let data = small_dataset();
        let a = make_split(&data, &SplitSpec::new(SplitKind::Strong, 11)).unwrap();
        let b = make_split(&data, &SplitSpec::new(SplitKind::Strong, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_needs_three_slides_per_center() {
        let data = generate_dataset(&GeneratorConfig {
            slides_per_center: 3,
            grid_w: 8,
            grid_h: 8,
            ..GeneratorConfig::default()
        })
        .unwrap();
        assert!(make_split(&data, &SplitSpec::new(SplitKind::Weak, 0)).is_ok());
    }

    #[test]
    fn uniform_noise_flip_rates() {
        let mut data = small_dataset();
        label_tiles(&mut data.tiles, 0.0).unwrap();
        let indices: Vec<usize> = (0..data.tiles.len()).collect();
        let before: Vec<TileLabel> = data.tiles.iter().map(|t| t.label).collect();

        let mut rng = rng_from_seed(1);
        let mut zero = data.tiles.clone();
        assert_eq!(
            inject_uniform_noise(&mut zero, &indices, 0.0, &mut rng).unwrap(),
            0
        );

        let mut all = data.tiles.clone();
        let flipped = inject_uniform_noise(&mut all, &indices, 1.0, &mut rng).unwrap();
        assert_eq!(flipped, indices.len());
        for (t, b) in all.iter().zip(&before) {
            assert_ne!(t.label, *b);
        }
    }

    #[test]
    fn uniform_noise_quarter_rate_within_binomial_bound() {
        let cfg = GeneratorConfig {
            slides_per_center: 6,
            grid_w: 20,
            grid_h: 20,
            seed: 3,
            ..GeneratorConfig::default()
        };
        let mut data = generate_dataset(&cfg).unwrap();
        label_tiles(&mut data.tiles, 0.0).unwrap();
        let indices: Vec<usize> = (0..data.tiles.len()).collect();
        let n = indices.len();
        assert!(n >= 10_000);
        let mut rng = rng_from_seed(9);
        let flipped = inject_uniform_noise(&mut data.tiles, &indices, 0.25, &mut rng).unwrap();
        let rate = flipped as f64 / n as f64;
        // 3-sigma binomial bound at p = 0.25
        let bound = 3.0 * (0.25 * 0.75 / n as f64).sqrt();
        assert!((rate - 0.25).abs() < bound, "rate {rate}");
    }

    #[test]
    fn border_noise_touches_only_partial_tumor_tiles() {
        let mut data = small_dataset();
        label_tiles(&mut data.tiles, 0.0).unwrap();
        let indices: Vec<usize> = (0..data.tiles.len()).collect();
        let before = data.tiles.clone();
        let mut rng = rng_from_seed(4);
        inject_border_noise(&mut data.tiles, &indices, 1.0, &mut rng).unwrap();
        for (t, b) in data.tiles.iter().zip(&before) {
            if b.label == TileLabel::Tumor && b.coverage < 1.0 {
                assert_eq!(t.label, TileLabel::NonTumor);
            } else {
                assert_eq!(t.label, b.label);
            }
        }
    }

    #[test]
    fn border_noise_no_op_on_boundary_aligned_polygons() {
        // Polygon aligned with tile boundaries: coverages are exactly 0 or 1.
        let p = Polygon::rectangle(2.0, 2.0, 6.0, 6.0).unwrap();
        let profile = CenterProfile::identity(0, 4);
        let mut tiles = generate_slide(&spec_with(vec![p], 3), &profile, 4, 2.0).unwrap();
        assert!(tiles.iter().all(|t| t.coverage == 0.0 || t.coverage == 1.0));
        let indices: Vec<usize> = (0..tiles.len()).collect();
        let before: Vec<TileLabel> = tiles.iter().map(|t| t.label).collect();
        let mut rng = rng_from_seed(5);
        let flipped = inject_border_noise(&mut tiles, &indices, 1.0, &mut rng).unwrap();
        assert_eq!(flipped, 0);
        for (t, b) in tiles.iter().zip(&before) {
            assert_eq!(t.label, *b);
        }
    }

    #[test]
    fn balanced_batches_even_on_imbalanced_data() {
        let data = small_dataset();
        let indices: Vec<usize> = (0..data.tiles.len())
            .filter(|&i| data.tiles[i].label != TileLabel::Excluded)
            .collect();
        let mut rng = rng_from_seed(6);
        let batches = balanced_batches(&data.tiles, &indices, 128, 1000, &mut rng).unwrap();
        let mut tumor = 0usize;
        let mut total = 0usize;
        for batch in &batches {
            for &i in batch {
                tumor += usize::from(data.tiles[i].label == TileLabel::Tumor);
                total += 1;
            }
        }
        let ratio = tumor as f64 / total as f64;
        assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn balanced_batches_need_both_classes() {
        let data = small_dataset();
        let only_tumor: Vec<usize> = (0..data.tiles.len())
            .filter(|&i| data.tiles[i].label == TileLabel::Tumor)
            .collect();
        let mut rng = rng_from_seed(7);
        assert!(balanced_batches(&data.tiles, &only_tumor, 8, 1, &mut rng).is_err());
    }

    #[test]
    fn dataset_has_tumor_and_normal_slides() {
        let data = small_dataset();
        let tumor_slides = data.slides.iter().filter(|s| s.slide_label == 1).count();
        let normal_slides = data.slides.iter().filter(|s| s.slide_label == 0).count();
        assert!(tumor_slides > 0 && normal_slides > 0);
        for s in &data.slides {
            if s.slide_label == 0 {
                assert_eq!(s.tumor_area, 0.0);
            } else {
                assert!(s.tumor_area > 0.0);
            }
        }
    }
}
