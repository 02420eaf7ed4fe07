//! On-disk dataset container: an `index.csv` manifest plus one image PGM and
//! one mask PGM per record, and the deterministic stratified split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::pgm;
use crate::rng::Rng;

pub const INDEX_HEADER: &str = "record_id,pid,label,image,mask";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing index.csv in {0}")]
    MissingIndex(PathBuf),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("index.csv row {0}: duplicate record id {1}")]
    DuplicateRecordId(usize, String),
    #[error("index.csv row {0}: unknown label {1:?}")]
    UnknownLabel(usize, String),
    #[error("index.csv row {0}: expected 5 fields, got {1}")]
    BadRow(usize, usize),
    #[error("index.csv has wrong header: expected {INDEX_HEADER:?}, got {0:?}")]
    BadHeader(String),
    #[error("referenced file missing: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    MalformedPgm {
        path: PathBuf,
        source: pgm::PgmError,
    },
    #[error("record {0}: image is {1}x{2} but mask is {3}x{4}")]
    DimensionMismatch(String, usize, usize, usize, usize),
    #[error("record {0}: mask sample {1} is not 0 or 255")]
    InvalidMask(String, u16),
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios([f64; 3]),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

/// Tumor class. The index order matches the confusion-matrix axis order used
/// throughout: 0 = glioma, 1 = meningioma, 2 = pituitary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Glioma = 0,
    Meningioma = 1,
    Pituitary = 2,
}

pub const LABELS: [Label; 3] = [Label::Glioma, Label::Meningioma, Label::Pituitary];
pub const CLASS_NAMES: [&str; 3] = ["glioma", "meningioma", "pituitary"];

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        LABELS.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "glioma" => Some(Label::Glioma),
            "meningioma" => Some(Label::Meningioma),
            "pituitary" => Some(Label::Pituitary),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of index.csv; paths are relative to the dataset root.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub record_id: String,
    pub pid: String,
    pub label: Label,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Validated manifest in file order.
#[derive(Clone, Debug)]
pub struct Manifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

/// One loaded case: 16-bit grayscale image and binary lesion mask of equal
/// dimensions.
#[derive(Clone, Debug)]
pub struct DatasetRecord {
    pub record_id: String,
    pub pid: String,
    pub label: Label,
    pub height: usize,
    pub width: usize,
    pub image: Vec<u16>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Partition> {
        match s {
            "train" => Some(Partition::Train),
            "validation" => Some(Partition::Validation),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }
}

/// Record-to-partition assignment, in manifest order.
#[derive(Clone, Debug)]
pub struct SplitAssignment {
    pub seed: u64,
    assignments: Vec<Partition>,
}

impl SplitAssignment {
    pub fn partition_of(&self, manifest_index: usize) -> Partition {
        self.assignments[manifest_index]
    }

    /// Manifest indices belonging to a partition, in manifest order.
    pub fn indices(&self, part: Partition) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == part)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Manifest {
    /// Builds an in-memory manifest, checking record-id uniqueness. File
    /// existence is only checked by `load_manifest`.
    pub fn from_entries(root: PathBuf, entries: Vec<ManifestEntry>) -> Result<Self, DatasetError> {
        if entries.is_empty() {
            return Err(DatasetError::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.record_id.clone()) {
                return Err(DatasetError::DuplicateRecordId(i + 2, e.record_id.clone()));
            }
        }
        Ok(Manifest { root, entries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads and validates `<dir>/index.csv`. Rows are kept in file order; every
/// referenced file must exist.
pub fn load_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let index = dir.join("index.csv");
    if !index.is_file() {
        return Err(DatasetError::MissingIndex(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&index)?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r'),
        None => return Err(DatasetError::EmptyManifest),
    };
    if header != INDEX_HEADER {
        return Err(DatasetError::BadHeader(header.to_string()));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in lines {
        let row = lineno + 1; // 1-based, header is row 1
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(DatasetError::BadRow(row, fields.len()));
        }
        let record_id = fields[0].to_string();
        if !seen.insert(record_id.clone()) {
            return Err(DatasetError::DuplicateRecordId(row, record_id));
        }
        let label = Label::parse(fields[2])
            .ok_or_else(|| DatasetError::UnknownLabel(row, fields[2].to_string()))?;
        let entry = ManifestEntry {
            record_id,
            pid: fields[1].to_string(),
            label,
            image: PathBuf::from(fields[3]),
            mask: PathBuf::from(fields[4]),
        };
        for rel in [&entry.image, &entry.mask] {
            let p = dir.join(rel);
            if !p.is_file() {
                return Err(DatasetError::MissingFile(p));
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    Ok(Manifest {
        root: dir.to_path_buf(),
        entries,
    })
}

/// Loads one record's image and mask PGMs and validates them against each
/// other.
pub fn load_record(manifest: &Manifest, entry: &ManifestEntry) -> Result<DatasetRecord, DatasetError> {
    let image_path = manifest.root.join(&entry.image);
    let mask_path = manifest.root.join(&entry.mask);
    let image = pgm::read_file(&image_path).map_err(|source| DatasetError::MalformedPgm {
        path: image_path.clone(),
        source,
    })?;
    let mask = pgm::read_file(&mask_path).map_err(|source| DatasetError::MalformedPgm {
        path: mask_path.clone(),
        source,
    })?;
    if image.width != mask.width || image.height != mask.height {
        return Err(DatasetError::DimensionMismatch(
            entry.record_id.clone(),
            image.height,
            image.width,
            mask.height,
            mask.width,
        ));
    }
    let mask_bits: Result<Vec<bool>, DatasetError> = mask
        .samples
        .iter()
        .map(|&s| match s {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(DatasetError::InvalidMask(entry.record_id.clone(), other)),
        })
        .collect();
    Ok(DatasetRecord {
        record_id: entry.record_id.clone(),
        pid: entry.pid.clone(),
        label: entry.label,
        height: image.height,
        width: image.width,
        image: image.samples,
        mask: mask_bits?,
    })
}

/// Deterministic stratified split. Within each class, records are shuffled by
/// the seeded generator, then the first floor(r_test·n) go to test, the next
/// floor(r_val·n) to validation, and the remainder to train.
///
/// Classes are processed in label order sharing one generator stream, so the
/// whole assignment is a pure function of (manifest order, ratios, seed).
pub fn stratified_split(
    manifest: &Manifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    if manifest.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let (r_train, r_val, r_test) = ratios;
    let bad = [r_train, r_val, r_test];
    if bad.iter().any(|&r| r <= 0.0 || !r.is_finite()) || (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(bad));
    }

    let mut assignments = vec![Partition::Train; manifest.len()];
    let mut rng = Rng::new(seed);
    for label in LABELS {
        let mut idx: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let n_test = (r_test * n as f64).floor() as usize;
        let n_val = (r_val * n as f64).floor() as usize;
        for (pos, &mi) in idx.iter().enumerate() {
            assignments[mi] = if pos < n_test {
                Partition::Test
            } else if pos < n_test + n_val {
                Partition::Validation
            } else {
                Partition::Train
            };
        }
    }
    Ok(SplitAssignment { seed, assignments })
}

/// Per-class tallies in label order [glioma, meningioma, pituitary].
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Label>) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Class counts of one partition of a split manifest.
pub fn partition_class_counts(
    manifest: &Manifest,
    split: &SplitAssignment,
    part: Partition,
) -> [usize; 3] {
    let labels: Vec<Label> = split
        .indices(part)
        .iter()
        .map(|&i| manifest.entries[i].label)
        .collect();
    class_counts(labels.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;
    use tempfile::TempDir;

    /// In-memory manifest with the given per-class counts; no backing files.
    pub(crate) fn synthetic_manifest(counts: [usize; 3]) -> Manifest {
        let mut entries = Vec::new();
        for (ci, &n) in counts.iter().enumerate() {
            for k in 0..n {
                let id = format!("r{ci}_{k:04}");
                entries.push(ManifestEntry {
                    record_id: id.clone(),
                    pid: format!("p{ci}_{k:04}"),
                    label: Label::from_index(ci).unwrap(),
                    image: PathBuf::from(format!("{id}_img.pgm")),
                    mask: PathBuf::from(format!("{id}_msk.pgm")),
                });
            }
        }
        Manifest::from_entries(PathBuf::from("mem"), entries).unwrap()
    }

    fn write_tiny_dataset(dir: &Path, rows: &[(&str, &str, &str)]) {
        let mut index = String::from(INDEX_HEADER);
        index.push('\n');
        for (id, pid, label) in rows {
            let img = format!("{id}_img.pgm");
            let msk = format!("{id}_msk.pgm");
            pgm::write_u16(&dir.join(&img), 2, 2, &[1, 2, 3, 4]).unwrap();
            pgm::write_u8(&dir.join(&msk), 2, 2, &[0, 255, 255, 0]).unwrap();
            index.push_str(&format!("{id},{pid},{label},{img},{msk}\n"));
        }
        fs::write(dir.join("index.csv"), index).unwrap();
    }

    #[test]
    fn table1_counts_and_totals() {
        let m = synthetic_manifest([1426, 708, 930]);
        assert_eq!(m.len(), 3064);
        let counts = class_counts(m.entries().iter().map(|e| &e.label));
        assert_eq!(counts, [1426, 708, 930]);
    }

    #[test]
    fn load_manifest_happy_path_and_order() {
        let dir = TempDir::new().unwrap();
        write_tiny_dataset(
            dir.path(),
            &[
                ("a", "p1", "glioma"),
                ("b", "p2", "meningioma"),
                ("c", "p3", "pituitary"),
            ],
        );
        let m = load_manifest(dir.path()).unwrap();
        let ids: Vec<&str> = m.entries().iter().map(|e| e.record_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn load_manifest_header_only_is_empty() {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("index.csv"), format!("{INDEX_HEADER}\n")).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(DatasetError::EmptyManifest)));
    }

    #[test]
    fn load_manifest_missing_index() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(DatasetError::MissingIndex(_))));
    }

    #[test]
    fn load_manifest_unknown_label_reports_row() {
        let dir = TempDir::new().unwrap();
        write_tiny_dataset(
            dir.path(),
            &[("a", "p1", "glioma"), ("b", "p2", "astrocytoma")],
        );
        match load_manifest(dir.path()) {
            Err(DatasetError::UnknownLabel(row, label)) => {
                assert_eq!(row, 3);
                assert_eq!(label, "astrocytoma");
            }
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn load_manifest_duplicate_id() {
        let dir = TempDir::new().unwrap();
        write_tiny_dataset(dir.path(), &[("a", "p1", "glioma")]);
        let mut index = fs::read_to_string(dir.path().join("index.csv")).unwrap();
        index.push_str("a,p9,glioma,a_img.pgm,a_msk.pgm\n");
        fs::write(dir.path().join("index.csv"), index).unwrap();
        assert!(matches!(
            load_manifest(dir.path()),
            Err(DatasetError::DuplicateRecordId(3, _))
        ));
    }

    #[test]
    fn load_manifest_missing_file() {
        let dir = TempDir::new().unwrap();
        write_tiny_dataset(dir.path(), &[("a", "p1", "glioma")]);
        fs::remove_file(dir.path().join("a_msk.pgm")).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(DatasetError::MissingFile(_))));
    }

    #[test]
    fn load_record_decodes_16bit_big_endian() {
        let dir = TempDir::new().unwrap();
        let mut samples = vec![0u16; 16];
        samples[0] = 0x0102;
        pgm::write_u16(&dir.path().join("a_img.pgm"), 4, 4, &samples).unwrap();
        pgm::write_u8(&dir.path().join("a_msk.pgm"), 4, 4, &[255; 16]).unwrap();
        fs::write(
            dir.path().join("index.csv"),
            format!("{INDEX_HEADER}\na,p1,glioma,a_img.pgm,a_msk.pgm\n"),
        )
        .unwrap();
        let m = load_manifest(dir.path()).unwrap();
        let rec = load_record(&m, &m.entries()[0]).unwrap();
        assert_eq!(rec.image[0], 258);
        assert!(rec.mask.iter().all(|&b| b));
    }

    #[test]
    fn load_record_dimension_mismatch() {
        let dir = TempDir::new().unwrap();
        pgm::write_u16(&dir.path().join("a_img.pgm"), 5, 5, &[0; 25]).unwrap();
        pgm::write_u8(&dir.path().join("a_msk.pgm"), 4, 4, &[0; 16]).unwrap();
        fs::write(
            dir.path().join("index.csv"),
            format!("{INDEX_HEADER}\na,p1,glioma,a_img.pgm,a_msk.pgm\n"),
        )
        .unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert!(matches!(
            load_record(&m, &m.entries()[0]),
            Err(DatasetError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn load_record_invalid_mask_value() {
        let dir = TempDir::new().unwrap();
        pgm::write_u16(&dir.path().join("a_img.pgm"), 2, 2, &[0; 4]).unwrap();
        pgm::write_u8(&dir.path().join("a_msk.pgm"), 2, 2, &[0, 7, 255, 0]).unwrap();
        fs::write(
            dir.path().join("index.csv"),
            format!("{INDEX_HEADER}\na,p1,glioma,a_img.pgm,a_msk.pgm\n"),
        )
        .unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert!(matches!(
            load_record(&m, &m.entries()[0]),
            Err(DatasetError::InvalidMask(_, 7))
        ));
    }

    #[test]
    fn split_matches_table1_floor_arithmetic() {
        let m = synthetic_manifest([1426, 708, 930]);
        let split = stratified_split(&m, (0.70, 0.15, 0.15), 42).unwrap();
        assert_eq!(partition_class_counts(&m, &split, Partition::Train), [1000, 496, 652]);
        assert_eq!(partition_class_counts(&m, &split, Partition::Validation), [213, 106, 139]);
        assert_eq!(partition_class_counts(&m, &split, Partition::Test), [213, 106, 139]);
        assert_eq!(split.indices(Partition::Train).len(), 2148);
        assert_eq!(split.indices(Partition::Validation).len(), 458);
        assert_eq!(split.indices(Partition::Test).len(), 458);
    }

    #[test]
    fn split_ten_records_one_class() {
        let m = synthetic_manifest([10, 0, 0]);
        let split = stratified_split(&m, (0.70, 0.15, 0.15), 1).unwrap();
        assert_eq!(split.indices(Partition::Train).len(), 8);
        assert_eq!(split.indices(Partition::Validation).len(), 1);
        assert_eq!(split.indices(Partition::Test).len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let m = synthetic_manifest([40, 30, 30]);
        let a = stratified_split(&m, (0.70, 0.15, 0.15), 7).unwrap();
        let b = stratified_split(&m, (0.70, 0.15, 0.15), 7).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let distinct = (0..10u64)
            .map(|s| stratified_split(&m, (0.70, 0.15, 0.15), s).unwrap().assignments)
            .collect::<Vec<_>>();
        let all_same = distinct.iter().all(|v| *v == distinct[0]);
        assert!(!all_same, "ten seeds should not all agree");
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let m = synthetic_manifest([5, 5, 5]);
        assert!(matches!(
            stratified_split(&m, (0.5, 0.2, 0.2), 0),
            Err(DatasetError::BadRatios(_))
        ));
    }

    #[test]
    fn class_counts_empty_partition() {
        assert_eq!(class_counts(std::iter::empty::<&Label>()), [0, 0, 0]);
    }

    proptest! {
        #[test]
        fn split_partitions_disjoint_and_exhaustive(
            g in 1usize..40, me in 1usize..40, pi in 1usize..40, seed in 0u64..200
        ) {
            let m = synthetic_manifest([g, me, pi]);
            let split = stratified_split(&m, (0.70, 0.15, 0.15), seed).unwrap();
            let train = split.indices(Partition::Train);
            let val = split.indices(Partition::Validation);
            let test = split.indices(Partition::Test);
            prop_assert_eq!(train.len() + val.len() + test.len(), m.len());
            let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m.len()).collect::<Vec<_>>());
            // per-class floor rule
            for (ci, &n) in [g, me, pi].iter().enumerate() {
                let want = (0.15 * n as f64).floor() as usize;
                let label = Label::from_index(ci).unwrap();
                let count = |part: Partition| {
                    split.indices(part).iter()
                        .filter(|&&i| m.entries()[i].label == label)
                        .count()
                };
                prop_assert_eq!(count(Partition::Test), want);
                prop_assert_eq!(count(Partition::Validation), want);
                prop_assert_eq!(count(Partition::Train), n - 2 * want);
            }
        }
    }
}
