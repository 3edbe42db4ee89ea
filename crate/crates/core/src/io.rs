//! Interchange formats: dataset CSV, prediction CSV, score/curve/bin CSVs,
//! split manifests (JSON) and confidence-map PGMs.
//!
//! Floats use Rust's shortest round-trip formatting, so writing and
//! re-reading a file reproduces the numbers bit for bit, and repeated runs
//! of the same configuration emit byte-identical files.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measures::UncertaintyScore;
use crate::methods::{PredictionSet, SampleMeta};
use crate::metrics::{CalibrationBins, RejectCurve};
use crate::sim::{Dataset, SlideInfo, SplitManifest, TileLabel, TileRecord};
use crate::slide::ConfidenceMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub fn write_dataset_csv(dataset: &Dataset, w: &mut impl Write) -> Result<()> {
    write!(w, "slide_id,center_id,x,y,coverage,border,label")?;
    for j in 0..dataset.feature_dim {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for t in &dataset.tiles {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            t.slide_id,
            t.center_id,
            t.x,
            t.y,
            t.coverage,
            u8::from(t.border),
            t.label.to_code()
        )?;
        for f in &t.features {
            write!(w, ",{f}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset_csv(r: &mut impl BufRead, slides: Vec<SlideInfo>) -> Result<Dataset> {
    let mut lines = r.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty dataset file"))?
        .1?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 8 || cols[0] != "slide_id" || cols[6] != "label" {
        return Err(Error::parse(1, "unexpected dataset header"));
    }
    let feature_dim = cols.len() - 7;
    let mut tiles = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 + feature_dim {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, got {}", 7 + feature_dim, fields.len()),
            ));
        }
        let p = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad {what}: {:?}", fields[i])))
        };
        let coverage = p(4, "coverage")?;
        let label = TileLabel::from_code(
            fields[6]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad label"))?,
        )?;
        let mut features = Vec::with_capacity(feature_dim);
        for j in 0..feature_dim {
            features.push(p(7 + j, "feature")?);
        }
        tiles.push(TileRecord {
            features,
            label,
            coverage,
            border: fields[5] == "1",
            slide_id: fields[0]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad slide_id"))?,
            center_id: fields[1]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad center_id"))?,
            x: fields[2]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad x"))?,
            y: fields[3]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad y"))?,
        });
    }
    Ok(Dataset {
        feature_dim,
        tiles,
        slides,
    })
}

/// One row per (sample, draw): `sample_id,slide_id,center_id,label,draw,p0,...`.
pub fn write_predictions_csv(set: &PredictionSet, w: &mut impl Write) -> Result<()> {
    write!(w, "sample_id,slide_id,center_id,label,draw")?;
    for c in 0..set.num_classes() {
        write!(w, ",p{c}")?;
    }
    writeln!(w)?;
    for i in 0..set.len() {
        let m = set.meta()[i];
        let probs = set.sample_probs(i);
        for draw in 0..probs.rows() {
            write!(
                w,
                "{},{},{},{},{draw}",
                m.sample_id, m.slide_id, m.center_id, m.label
            )?;
            for v in probs.row(draw) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Parse a prediction CSV; `method_tag` names the producing method (the
/// format itself does not carry it). Draw rows of one sample must be
/// contiguous and numbered 0..S-1.
pub fn read_predictions_csv(r: &mut impl BufRead, method_tag: &str) -> Result<PredictionSet> {
    let mut lines = r.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty prediction file"))?
        .1?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 7 || cols[0] != "sample_id" || cols[4] != "draw" {
        return Err(Error::parse(1, "unexpected prediction header"));
    }
    let classes = cols.len() - 5;

    let mut meta: Vec<SampleMeta> = Vec::new();
    let mut probs: Vec<Matrix> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut current: Option<SampleMeta> = None;

    let finish = |meta: &mut Vec<SampleMeta>,
                  probs: &mut Vec<Matrix>,
                  current: &mut Option<SampleMeta>,
                  rows: &mut Vec<Vec<f64>>|
     -> Result<()> {
        if let Some(m) = current.take() {
            meta.push(m);
            probs.push(Matrix::from_rows(rows)?);
            rows.clear();
        }
        Ok(())
    };

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + classes {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, got {}", 5 + classes, fields.len()),
            ));
        }
        let sample_id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(line_no, "bad sample_id"))?;
        let m = SampleMeta {
            sample_id,
            slide_id: fields[1]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad slide_id"))?,
            center_id: fields[2]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad center_id"))?,
            label: fields[3]
                .parse()
                .map_err(|_| Error::parse(line_no, "bad label"))?,
        };
        let draw: usize = fields[4]
            .parse()
            .map_err(|_| Error::parse(line_no, "bad draw index"))?;
        match current {
            Some(cur) if cur.sample_id == sample_id => {
                if draw != rows.len() {
                    return Err(Error::parse(
                        line_no,
                        format!("draw {draw} out of order (expected {})", rows.len()),
                    ));
                }
            }
            _ => {
                finish(&mut meta, &mut probs, &mut current, &mut rows)?;
                if draw != 0 {
                    return Err(Error::parse(line_no, "first draw of a sample must be 0"));
                }
                current = Some(m);
            }
        }
        let mut row = Vec::with_capacity(classes);
        for (c, field) in fields[5..].iter().enumerate() {
            row.push(
                field
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad probability p{c}")))?,
            );
        }
        rows.push(row);
    }
    finish(&mut meta, &mut probs, &mut current, &mut rows)?;
    if meta.is_empty() {
        return Err(Error::parse(2, "prediction file has no rows"));
    }
    PredictionSet::new(meta, probs, method_tag)
}

pub fn write_scores_csv(scores: &[UncertaintyScore], w: &mut impl Write) -> Result<()> {
    writeln!(w, "sample_id,measure,value")?;
    for s in scores {
        writeln!(w, "{},{},{}", s.sample_id, s.measure.name(), s.value)?;
    }
    Ok(())
}

pub fn write_curve_csv(curve: &RejectCurve, w: &mut impl Write) -> Result<()> {
    writeln!(w, "reject_fraction,metric_value")?;
    for (x, y) in &curve.points {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

pub fn write_bins_csv(bins: &CalibrationBins, w: &mut impl Write) -> Result<()> {
    writeln!(w, "bin_lo,bin_hi,count,mean_conf,mean_acc")?;
    for b in &bins.bins {
        writeln!(
            w,
            "{},{},{},{},{}",
            b.lo, b.hi, b.count, b.mean_confidence, b.mean_accuracy
        )?;
    }
    Ok(())
}

pub fn write_split_manifest(manifest: &SplitManifest, w: &mut impl Write) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_split_manifest(r: &mut impl BufRead) -> Result<SplitManifest> {
    let mut buf = String::new();
    r.read_to_string(&mut buf)?;
    serde_json::from_str(&buf).map_err(|e| Error::parse(e.line(), format!("manifest: {e}")))
}

pub fn write_slides_json(slides: &[SlideInfo], w: &mut impl Write) -> Result<()> {
    let json = serde_json::to_string_pretty(slides)
        .map_err(|e| Error::invalid(format!("slide info serialization: {e}")))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_slides_json(r: &mut impl BufRead) -> Result<Vec<SlideInfo>> {
    let mut buf = String::new();
    r.read_to_string(&mut buf)?;
    serde_json::from_str(&buf).map_err(|e| Error::parse(e.line(), format!("slide info: {e}")))
}

/// 8-bit grayscale PGM (P2): tumor probability scaled to 0-255, sentinel
/// cells written as 0. Pair it with [`write_pgm_mask`] to tell sentinel
/// cells from genuinely black ones.
pub fn write_pgm(map: &ConfidenceMap, w: &mut impl Write) -> Result<()> {
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", map.width, map.height)?;
    writeln!(w, "255")?;
    for y in 0..map.height {
        let mut row = Vec::with_capacity(map.width);
        for x in 0..map.width {
            let v = match map.get(x, y) {
                Some(p) => (p * 255.0).round() as u8,
                None => 0,
            };
            row.push(v.to_string());
        }
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Sidecar mask: 255 where a prediction exists, 0 at sentinel cells.
pub fn write_pgm_mask(map: &ConfidenceMap, w: &mut impl Write) -> Result<()> {
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", map.width, map.height)?;
    writeln!(w, "255")?;
    for y in 0..map.height {
        let mut row = Vec::with_capacity(map.width);
        for x in 0..map.width {
            row.push(if map.get(x, y).is_some() { "255" } else { "0" }.to_string());
        }
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// CSV grid of the confidence map; sentinel cells are written as -1.
pub fn write_map_csv(map: &ConfidenceMap, w: &mut impl Write) -> Result<()> {
    for y in 0..map.height {
        let mut row = Vec::with_capacity(map.width);
        for x in 0..map.width {
            row.push(match map.get(x, y) {
                Some(p) => p.to_string(),
                None => "-1".to_string(),
            });
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    use std::io::Write as _;
    w.flush()?;
    Ok(())
}

pub fn open_file(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, GeneratorConfig};

    fn tiny_dataset() -> Dataset {
        generate_dataset(&GeneratorConfig {
            slides_per_center: 3,
            grid_w: 6,
            grid_h: 6,
            seed: 2,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let data = tiny_dataset();
        let mut blob = Vec::new();
        write_dataset_csv(&data, &mut blob).unwrap();
        let parsed = read_dataset_csv(&mut blob.as_slice(), data.slides.clone()).unwrap();
        assert_eq!(parsed.feature_dim, data.feature_dim);
        assert_eq!(parsed.tiles.len(), data.tiles.len());
        for (a, b) in parsed.tiles.iter().zip(&data.tiles) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.coverage, b.coverage);
            assert_eq!(a.label, b.label);
            assert_eq!(
                (a.x, a.y, a.slide_id, a.center_id),
                (b.x, b.y, b.slide_id, b.center_id)
            );
        }
    }

    #[test]
    fn predictions_roundtrip_is_exact() {
        use crate::methods::SampleMeta;
        let meta: Vec<SampleMeta> = (0..3)
            .map(|i| SampleMeta {
                sample_id: i,
                slide_id: 1,
                center_id: 2,
                label: (i % 2) as u8,
            })
            .collect();
        let probs: Vec<Matrix> = (0..3)
            .map(|i| {
                let p = 1.0 / (2.0 + i as f64);
                Matrix::from_rows(&[vec![p, 1.0 - p], vec![1.0 - p, p]]).unwrap()
            })
            .collect();
        let set = PredictionSet::new(meta, probs, "mcdo").unwrap();
        let mut blob = Vec::new();
        write_predictions_csv(&set, &mut blob).unwrap();
        let parsed = read_predictions_csv(&mut blob.as_slice(), "mcdo").unwrap();
        assert_eq!(parsed.len(), set.len());
        assert_eq!(parsed.num_draws(), 2);
        for i in 0..3 {
            assert_eq!(parsed.sample_probs(i).data(), set.sample_probs(i).data());
            assert_eq!(parsed.meta()[i], set.meta()[i]);
        }
        // byte-identical re-serialization
        let mut blob2 = Vec::new();
        write_predictions_csv(&parsed, &mut blob2).unwrap();
        assert_eq!(blob, blob2);
    }

    #[test]
    fn prediction_parse_errors_carry_line_numbers() {
        let text =
            "sample_id,slide_id,center_id,label,draw,p0,p1\n0,0,0,0,0,0.5,0.5\n0,0,0,0,2,0.5,0.5\n";
        let err = read_predictions_csv(&mut text.as_bytes(), "x").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let text = "sample_id,slide_id,center_id,label,draw,p0,p1\n0,0,0,0,0,oops,0.5\n";
        let err = read_predictions_csv(&mut text.as_bytes(), "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn split_manifest_roundtrip() {
        let data = tiny_dataset();
        let manifest = crate::sim::make_split(
            &data,
            &crate::sim::SplitSpec::new(crate::sim::SplitKind::Weak, 1),
        )
        .unwrap();
        let mut blob = Vec::new();
        write_split_manifest(&manifest, &mut blob).unwrap();
        let parsed = read_split_manifest(&mut blob.as_slice()).unwrap();
        assert_eq!(parsed, manifest);
    }

    #[test]
    fn pgm_format_shape() {
        let map =
            crate::slide::stitch_confidence_map(0, 3, 2, &[(0, 0, 1.0), (1, 1, 0.5)]).unwrap();
        let mut blob = Vec::new();
        write_pgm(&map, &mut blob).unwrap();
        let text = String::from_utf8(blob).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "P2");
        assert_eq!(lines[1], "3 2");
        assert_eq!(lines[2], "255");
        assert_eq!(lines[3], "255 0 0");
        assert_eq!(lines[4], "0 128 0");

        let mut mask = Vec::new();
        write_pgm_mask(&map, &mut mask).unwrap();
        let mask = String::from_utf8(mask).unwrap();
        assert!(mask.lines().nth(3).unwrap().starts_with("255 0 0"));
    }
}
