//! Synthetic phantom dataset: three procedurally distinct lesion textures
//! (filled blob, ring, stripes) on a shared head-like background, with the
//! lesion disk as the mask. Used for CI, acceptance runs, and demos where
//! real MRI data cannot ship.

use std::path::Path;

use crate::dataset::{DatasetError, DatasetRecord, Label, INDEX_HEADER, LABELS};
use crate::pgm;
use crate::rng::{splitmix64, Rng};

/// Parameters of one generated dataset.
#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub per_class: usize,
    pub side: usize,
    pub seed: u64,
}

const BG_OUTSIDE: f64 = 1500.0;
const BG_HEAD: f64 = 12000.0;
const DARK_CORE: f64 = 3500.0;

fn synth_record(label: Label, index: usize, spec: &SynthSpec) -> DatasetRecord {
    let s = spec.side;
    // independent stream per record so records do not shift when counts change
    let mut rng = Rng::new(
        splitmix64(spec.seed) ^ splitmix64((label.index() as u64) << 32 | index as u64),
    );

    let cx = rng.range_f64(0.35, 0.65) * s as f64;
    let cy = rng.range_f64(0.35, 0.65) * s as f64;
    let radius = rng.range_f64(0.14, 0.22) * s as f64;
    let radius = radius.max(2.0);
    let amp = rng.range_f64(40000.0, 55000.0);
    let theta = rng.range_f64(0.0, std::f64::consts::PI);
    let band = (0.35 * radius).max(1.5);
    let (dir_r, dir_c) = (theta.sin(), theta.cos());

    let head_r = 0.48 * s as f64;
    let (hc, hr) = (s as f64 / 2.0, s as f64 / 2.0);

    let mut image = vec![0u16; s * s];
    let mut mask = vec![false; s * s];
    for r in 0..s {
        for c in 0..s {
            let (fr, fc) = (r as f64 + 0.5, c as f64 + 0.5);
            let head_d = ((fr - hr).powi(2) + (fc - hc).powi(2)).sqrt() / head_r;
            let mut v = if head_d <= 1.0 {
                BG_HEAD * (1.0 - 0.45 * head_d * head_d)
            } else {
                BG_OUTSIDE
            };
            let (dr, dc) = (fr - cy, fc - cx);
            let d = (dr * dr + dc * dc).sqrt();
            if d <= radius {
                mask[r * s + c] = true;
                v = match label {
                    Label::Glioma => amp * (1.0 - 0.30 * (d / radius).powi(2)),
                    Label::Meningioma => {
                        if d >= 0.55 * radius {
                            amp
                        } else {
                            DARK_CORE
                        }
                    }
                    Label::Pituitary => {
                        let t = dr * dir_r + dc * dir_c;
                        if (t / band).floor().rem_euclid(2.0) == 0.0 {
                            amp
                        } else {
                            DARK_CORE
                        }
                    }
                };
                v += rng.range_f64(-1200.0, 1200.0);
            } else {
                v += rng.range_f64(-600.0, 600.0);
            }
            image[r * s + c] = v.clamp(0.0, 65535.0) as u16;
        }
    }

    let id = format!("{}_{index:04}", label.name());
    DatasetRecord {
        record_id: id.clone(),
        pid: format!("pid_{id}"),
        label,
        height: s,
        width: s,
        image,
        mask,
    }
}

/// All records of a spec, class-major, in index order.
pub fn generate_records(spec: &SynthSpec) -> Vec<DatasetRecord> {
    let mut records = Vec::with_capacity(3 * spec.per_class);
    for label in LABELS {
        for i in 0..spec.per_class {
            records.push(synth_record(label, i, spec));
        }
    }
    records
}

/// Writes `index.csv` plus `images/` and `masks/` PGMs under `dir`. Output
/// bytes are a pure function of the spec.
pub fn write_dataset(dir: &Path, spec: &SynthSpec) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for rec in generate_records(spec) {
        let image_rel = format!("images/{}.pgm", rec.record_id);
        let mask_rel = format!("masks/{}.pgm", rec.record_id);
        pgm::write_u16(&dir.join(&image_rel), rec.width, rec.height, &rec.image)
            .map_err(|e| DatasetError::Io(std::io::Error::other(e)))?;
        let mask_bytes: Vec<u8> = rec.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
        pgm::write_u8(&dir.join(&mask_rel), rec.width, rec.height, &mask_bytes)
            .map_err(|e| DatasetError::Io(std::io::Error::other(e)))?;
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.record_id, rec.pid, rec.label, image_rel, mask_rel
        ));
    }
    std::fs::write(dir.join("index.csv"), index)?;
    Ok(())
}
