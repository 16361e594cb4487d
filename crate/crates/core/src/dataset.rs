//! Dataset model and I/O: feature tables with optional labels in CSV or a
//! compact binary layout, ground-truth sidecars, synthetic blob generation,
//! and the labelled/unlabelled split protocols.

use crate::linalg::Mat;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Feature vectors with per-instance optional labels. Instances whose
/// label is `None` form the unlabelled set the estimator works on; the
/// distinct labels present define the old-class set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    /// Stable instance ids, unique, in row order.
    pub ids: Vec<u64>,
    pub x: Mat,
    pub labels: Vec<Option<i64>>,
}

impl FeatureDataset {
    pub fn new(ids: Vec<u64>, x: Mat, labels: Vec<Option<i64>>) -> Result<Self> {
        if ids.len() != x.rows() || labels.len() != x.rows() {
            return Err(Error::DimMismatch(format!(
                "{} ids / {} labels for {} rows",
                ids.len(),
                labels.len(),
                x.rows()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::TooFewPoints("dataset needs at least one instance".into()));
        }
        let distinct: BTreeSet<u64> = ids.iter().copied().collect();
        if distinct.len() != ids.len() {
            return Err(Error::Parse("duplicate instance ids".into()));
        }
        Ok(FeatureDataset { ids, x, labels })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Distinct labelled classes, sorted (the old classes `Y_l`).
    pub fn labelled_classes(&self) -> Vec<i64> {
        let s: BTreeSet<i64> = self.labels.iter().flatten().copied().collect();
        s.into_iter().collect()
    }

    /// Row indices of the unlabelled instances (`D^u`).
    pub fn unlabelled_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i].is_none()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Gpcf,
}

impl FileFormat {
    /// Infers the format from the file extension (`.csv` / `.gpcf`).
    pub fn from_path(path: &Path) -> Result<FileFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(FileFormat::Csv),
            Some("gpcf") => Ok(FileFormat::Gpcf),
            other => Err(Error::Parse(format!(
                "cannot infer format from extension {other:?}; use .csv or .gpcf"
            ))),
        }
    }
}

/// Path of the ground-truth sidecar: `dir/stem.truth.ext`.
pub fn truth_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.truth.{ext}"))
}

pub fn load_features(path: &Path, format: FileFormat) -> Result<FeatureDataset> {
    match format {
        FileFormat::Csv => load_csv(path),
        FileFormat::Gpcf => load_gpcf(path),
    }
}

pub fn save_features(ds: &FeatureDataset, path: &Path, format: FileFormat) -> Result<()> {
    match format {
        FileFormat::Csv => save_csv(ds, path),
        FileFormat::Gpcf => save_gpcf(ds, path),
    }
}

fn load_csv(path: &Path) -> Result<FeatureDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Parse(format!(
            "{}: header must start with `id,label`, got {:?}",
            path.display(),
            headers.iter().take(2).collect::<Vec<_>>()
        )));
    }
    let d = headers.len() - 2;
    for (j, name) in headers.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Parse(format!(
                "{}: feature column {} named {name:?}, expected \"f{j}\"",
                path.display(),
                j + 2
            )));
        }
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ri, record) in reader.records().enumerate() {
        let line = ri + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != d + 2 {
            return Err(Error::DimMismatch(format!(
                "{} line {line}: {} fields, expected {}",
                path.display(),
                record.len(),
                d + 2
            )));
        }
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("{} line {line}: bad id: {e}", path.display())))?;
        let label_field = record[1].trim();
        let label: Option<i64> = if label_field.is_empty() {
            None
        } else {
            Some(label_field.parse().map_err(|e| {
                Error::Parse(format!("{} line {line}: bad label: {e}", path.display()))
            })?)
        };
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let v: f64 = record[j + 2].trim().parse().map_err(|e| {
                Error::Parse(format!("{} line {line}: bad f{j}: {e}", path.display()))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "{} line {line}: non-finite f{j}",
                    path.display()
                )));
            }
            row.push(v);
        }
        ids.push(id);
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::TooFewPoints(format!("{}: no data rows", path.display())));
    }
    let n = rows.len();
    let x = if d == 0 {
        Mat::zeros(n, 0)
    } else {
        Mat::from_rows(&rows)?
    };
    FeatureDataset::new(ids, x, labels)
}

fn save_csv(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = vec!["id".into(), "label".into()];
    header.extend((0..ds.d()).map(|j| format!("f{j}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = Vec::with_capacity(ds.d() + 2);
        record.push(ds.ids[i].to_string());
        record.push(ds.labels[i].map(|l| l.to_string()).unwrap_or_default());
        // 17 significant digits: lossless round trip for binary64.
        record.extend(ds.x.row(i).iter().map(|v| format!("{v:.16e}")));
        writer
            .write_record(&record)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    writer.flush()?;
    Ok(())
}

const GPCF_MAGIC: &[u8; 4] = b"GPCF";
const GPCF_VERSION: u32 = 1;

/// Labels in the binary layout are i64 with -1 reserved for "unlabelled",
/// and ids are implicit row numbers; both restrictions are validated on
/// save so nothing is silently dropped.
fn save_gpcf(ds: &FeatureDataset, path: &Path) -> Result<()> {
    for (i, &id) in ds.ids.iter().enumerate() {
        if id != i as u64 {
            return Err(Error::Parse(format!(
                "binary format stores implicit ids 0..N-1; instance {i} has id {id}"
            )));
        }
    }
    if ds.labels.iter().flatten().any(|&l| l == -1) {
        return Err(Error::Parse(
            "label -1 collides with the binary unlabelled sentinel".into(),
        ));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(GPCF_MAGIC)?;
    out.write_all(&GPCF_VERSION.to_le_bytes())?;
    out.write_all(&(ds.n() as u64).to_le_bytes())?;
    out.write_all(&(ds.d() as u64).to_le_bytes())?;
    for i in 0..ds.n() {
        for v in ds.x.row(i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for l in &ds.labels {
        out.write_all(&l.unwrap_or(-1).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn load_gpcf(path: &Path) -> Result<FeatureDataset> {
    let bytes = std::fs::read(path)?;
    let mut off = 0usize;
    let take = |off: &mut usize, len: usize| -> Result<&[u8]> {
        if *off + len > bytes.len() {
            return Err(Error::Parse(format!(
                "{}: unexpected end of file at offset {}",
                path.display(),
                *off
            )));
        }
        let s = &bytes[*off..*off + len];
        *off += len;
        Ok(s)
    };
    if take(&mut off, 4)? != GPCF_MAGIC {
        return Err(Error::Parse(format!("{}: bad magic bytes", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != GPCF_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let n = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::TooFewPoints(format!("{}: empty dataset", path.display())));
    }
    let need = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|f| f.checked_add(n * 8))
        .ok_or_else(|| Error::Parse(format!("{}: absurd dimensions", path.display())))?;
    if bytes.len() - off != need {
        return Err(Error::Parse(format!(
            "{}: payload is {} bytes, expected {need} for N={n}, d={d}",
            path.display(),
            bytes.len() - off
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Parse(format!(
                "{}: non-finite feature at offset {}",
                path.display(),
                off - 8
            )));
        }
        data.push(v);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = i64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        labels.push(if l == -1 { None } else { Some(l) });
    }
    let x = if d == 0 { Mat::zeros(n, 0) } else { Mat::from_vec(n, d, data)? };
    FeatureDataset::new((0..n as u64).collect(), x, labels)
}

/// Specification for synthetic blob data: isotropic Gaussian classes with
/// uniformly drawn centers.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub k_true: usize,
    pub d: usize,
    pub per_class: usize,
    /// Centers are drawn uniformly in `[-center_scale, center_scale]^d`.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub sigma: f64,
    /// The first `k_labelled` classes become the old (labelled) classes.
    pub k_labelled: usize,
    /// Share of each old class that keeps its label.
    pub labelled_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.d == 0 || self.per_class == 0 {
            return Err(Error::Config("k_true, d, per_class must be positive".into()));
        }
        if self.k_labelled > self.k_true {
            return Err(Error::Config(format!(
                "k_labelled {} exceeds k_true {}",
                self.k_labelled, self.k_true
            )));
        }
        if !(0.0..=1.0).contains(&self.labelled_fraction) {
            return Err(Error::Config("labelled_fraction must lie in [0, 1]".into()));
        }
        if self.sigma < 0.0 || self.center_scale < 0.0 {
            return Err(Error::Config("sigma and center_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Generates blob data around explicit per-class centers (one row each).
/// Returns the visible dataset (labels only on the split-selected share of
/// the first `k_labelled` classes) and the fully labelled ground truth.
pub fn gen_from_centers(
    centers: &Mat,
    per_class: usize,
    sigma: f64,
    k_labelled: usize,
    labelled_fraction: f64,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset)> {
    let k_true = centers.rows();
    if k_true == 0 || per_class == 0 {
        return Err(Error::Config("need at least one class and one point per class".into()));
    }
    if k_labelled > k_true {
        return Err(Error::Config(format!(
            "k_labelled {k_labelled} exceeds k_true {k_true}"
        )));
    }
    let d = centers.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_seed = rng.gen::<u64>();
    let n = k_true * per_class;
    let mut x = Mat::zeros(n, d);
    let mut truth_labels = Vec::with_capacity(n);
    for c in 0..k_true {
        for i in 0..per_class {
            let row = x.row_mut(c * per_class + i);
            for (dst, center) in row.iter_mut().zip(centers.row(c)) {
                *dst = center + sigma * gauss(&mut rng);
            }
            truth_labels.push(Some(c as i64));
        }
    }
    let ids: Vec<u64> = (0..n as u64).collect();
    let truth = FeatureDataset::new(ids, x, truth_labels)?;
    let old: Vec<i64> = (0..k_labelled as i64).collect();
    let visible = make_split(&truth, &old, labelled_fraction, split_seed)?;
    Ok((visible, truth))
}

/// Generates Gaussian blobs with uniformly drawn centers and applies the
/// labelled/unlabelled split. Deterministic: identical specs give identical
/// datasets.
pub fn gen_synth(spec: &SynthSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers = Mat::zeros(spec.k_true, spec.d);
    for c in 0..spec.k_true {
        for v in centers.row_mut(c) {
            *v = rng.gen_range(-1.0..1.0) * spec.center_scale;
        }
    }
    let data_seed = rng.gen::<u64>();
    gen_from_centers(
        &centers,
        spec.per_class,
        spec.sigma,
        spec.k_labelled,
        spec.labelled_fraction,
        data_seed,
    )
}

/// Splits a fully labelled dataset into visible labels and the unlabelled
/// pool: within each listed old class a seeded random `fraction` of the
/// instances keeps its label (exact floor, at least one when the fraction
/// is positive); every other instance, including all of every unlisted
/// class, becomes unlabelled.
pub fn make_split(
    truth: &FeatureDataset,
    old_classes: &[i64],
    fraction: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let old: BTreeSet<i64> = old_classes.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Option<i64>> = vec![None; truth.n()];
    // Deterministic class order: the sorted set.
    for &class in &old {
        let mut rows: Vec<usize> = (0..truth.n())
            .filter(|&i| truth.labels[i] == Some(class))
            .collect();
        if rows.is_empty() {
            return Err(Error::TooFewClasses(format!(
                "old class {class} has no instances"
            )));
        }
        let keep = if fraction == 0.0 {
            0
        } else {
            ((fraction * rows.len() as f64).floor() as usize).max(1)
        };
        // Seeded partial Fisher-Yates: the first `keep` positions are the
        // labelled draw.
        for i in 0..keep.min(rows.len().saturating_sub(1)) {
            let j = rng.gen_range(i..rows.len());
            rows.swap(i, j);
        }
        for &r in rows.iter().take(keep) {
            labels[r] = Some(class);
        }
    }
    FeatureDataset::new(truth.ids.clone(), truth.x.clone(), labels)
}

/// Restricts the unlabelled pool to `overlap` old classes plus all new
/// classes: unlabelled instances of the remaining old classes are removed
/// entirely (their labelled instances stay). The overlapping classes are
/// the first `overlap` old classes in sorted order. Returns the filtered
/// dataset and its matching ground truth.
pub fn partial_overlap_split(
    ds: &FeatureDataset,
    truth: &FeatureDataset,
    overlap: usize,
) -> Result<(FeatureDataset, FeatureDataset)> {
    if ds.n() != truth.n() || ds.ids != truth.ids {
        return Err(Error::DimMismatch("dataset and truth ids disagree".into()));
    }
    let old = ds.labelled_classes();
    if overlap > old.len() {
        return Err(Error::OverlapTooLarge(format!(
            "overlap {overlap} exceeds {} labelled classes",
            old.len()
        )));
    }
    let kept_old: BTreeSet<i64> = old.iter().take(overlap).copied().collect();
    let all_old: BTreeSet<i64> = old.into_iter().collect();
    let keep: Vec<usize> = (0..ds.n())
        .filter(|&i| {
            if ds.labels[i].is_some() {
                return true; // labelled instances always stay
            }
            match truth.labels[i] {
                // Unlabelled instance of an old class: stays only if the
                // class overlaps.
                Some(c) if all_old.contains(&c) => kept_old.contains(&c),
                // New-class (or unknown) instance: stays.
                _ => true,
            }
        })
        .collect();
    let filter = |src: &FeatureDataset| -> Result<FeatureDataset> {
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| src.x.row(i).to_vec()).collect();
        let x = if src.d() == 0 {
            Mat::zeros(rows.len(), 0)
        } else {
            Mat::from_rows(&rows)?
        };
        FeatureDataset::new(
            keep.iter().map(|&i| src.ids[i]).collect(),
            x,
            keep.iter().map(|&i| src.labels[i]).collect(),
        )
    };
    Ok((filter(ds)?, filter(truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_dataset() -> FeatureDataset {
        FeatureDataset::new(
            vec![0, 1, 2],
            Mat::from_rows(&[
                vec![1.0, -2.5],
                vec![0.125, 3.0e-7],
                vec![-1.0 / 3.0, 7.25],
            ])
            .unwrap(),
            vec![Some(4), None, Some(-9)],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let ds = toy_dataset();
        save_features(&ds, &path, FileFormat::Csv).unwrap();
        let back = load_features(&path, FileFormat::Csv).unwrap();
        assert_eq!(ds, back, "17-significant-digit printing must round-trip exactly");
    }

    #[test]
    fn csv_inline_parse_with_empty_label() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("inline.csv");
        std::fs::write(&path, "id,label,f0\n0,3,1.5\n1,,2.5\n2,3,0.0\n").unwrap();
        let ds = load_features(&path, FileFormat::Csv).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.labels, vec![Some(3), None, Some(3)]);
        assert_eq!(ds.unlabelled_rows(), vec![1]);
        assert_eq!(ds.labelled_classes(), vec![3]);
    }

    #[test]
    fn csv_rejects_bad_headers_and_ragged_rows() {
        let dir = tempdir().unwrap();
        let bad_header = dir.path().join("h.csv");
        std::fs::write(&bad_header, "id,cls,f0\n0,1,2.0\n").unwrap();
        assert!(matches!(
            load_features(&bad_header, FileFormat::Csv),
            Err(Error::Parse(_))
        ));
        let bad_fname = dir.path().join("f.csv");
        std::fs::write(&bad_fname, "id,label,x0\n0,1,2.0\n").unwrap();
        assert!(matches!(
            load_features(&bad_fname, FileFormat::Csv),
            Err(Error::Parse(_))
        ));
        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, "id,label,f0\n0,1,2.0\n0,1,3.0\n").unwrap();
        assert!(matches!(load_features(&dup, FileFormat::Csv), Err(Error::Parse(_))));
    }

    #[test]
    fn gpcf_round_trip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("toy.gpcf");
        let ds = toy_dataset();
        save_features(&ds, &path, FileFormat::Gpcf).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = load_features(&path, FileFormat::Gpcf).unwrap();
        assert_eq!(ds, back);
        let path2 = dir.path().join("toy2.gpcf");
        save_features(&back, &path2, FileFormat::Gpcf).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn formats_agree() {
        let dir = tempdir().unwrap();
        let ds = toy_dataset();
        let pc = dir.path().join("a.csv");
        let pg = dir.path().join("a.gpcf");
        save_features(&ds, &pc, FileFormat::Csv).unwrap();
        save_features(&ds, &pg, FileFormat::Gpcf).unwrap();
        let from_csv = load_features(&pc, FileFormat::Csv).unwrap();
        let from_gpcf = load_features(&pg, FileFormat::Gpcf).unwrap();
        assert_eq!(from_csv, from_gpcf);
    }

    #[test]
    fn gpcf_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.gpcf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_features(&path, FileFormat::Gpcf), Err(Error::Parse(_))));
        // Valid header, truncated payload.
        let good = dir.path().join("good.gpcf");
        save_features(&toy_dataset(), &good, FileFormat::Gpcf).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_features(&path, FileFormat::Gpcf), Err(Error::Parse(_))));
    }

    #[test]
    fn gpcf_save_guards_its_sentinels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.gpcf");
        // Custom ids are not representable.
        let ds = FeatureDataset::new(
            vec![5, 6],
            Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            vec![None, None],
        )
        .unwrap();
        assert!(matches!(save_features(&ds, &path, FileFormat::Gpcf), Err(Error::Parse(_))));
        // Label -1 collides with the unlabelled sentinel.
        let ds = FeatureDataset::new(
            vec![0, 1],
            Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            vec![Some(-1), None],
        )
        .unwrap();
        assert!(matches!(save_features(&ds, &path, FileFormat::Gpcf), Err(Error::Parse(_))));
    }

    #[test]
    fn truth_sidecar_round_trips_with_zero_width_features() {
        let dir = tempdir().unwrap();
        let data_path = dir.path().join("run.gpcf");
        let tp = truth_path(&data_path);
        assert_eq!(tp, dir.path().join("run.truth.gpcf"));
        let truth = FeatureDataset::new(
            vec![0, 1, 2],
            Mat::zeros(3, 0),
            vec![Some(0), Some(1), Some(1)],
        )
        .unwrap();
        for fmt in [FileFormat::Gpcf, FileFormat::Csv] {
            let p = if fmt == FileFormat::Gpcf {
                tp.clone()
            } else {
                dir.path().join("run.truth.csv")
            };
            save_features(&truth, &p, fmt).unwrap();
            let back = load_features(&p, fmt).unwrap();
            assert_eq!(truth, back);
        }
    }

    #[test]
    fn make_split_counts_are_exact() {
        let spec = SynthSpec {
            k_true: 4,
            d: 3,
            per_class: 100,
            center_scale: 10.0,
            sigma: 0.5,
            k_labelled: 2,
            labelled_fraction: 0.5,
            seed: 7,
        };
        let (visible, truth) = gen_synth(&spec).unwrap();
        for class in 0..2i64 {
            let labelled = visible
                .labels
                .iter()
                .filter(|l| **l == Some(class))
                .count();
            assert_eq!(labelled, 50, "class {class}");
        }
        // New classes contribute nothing labelled; every new-class instance
        // is in the unlabelled pool.
        for i in 0..visible.n() {
            if matches!(truth.labels[i], Some(c) if c >= 2) {
                assert_eq!(visible.labels[i], None);
            }
        }
        // Features unchanged by the split.
        assert_eq!(visible.x, truth.x);

        let all = make_split(&truth, &[0, 1], 1.0, 3).unwrap();
        for i in 0..all.n() {
            if matches!(truth.labels[i], Some(c) if c < 2) {
                assert_eq!(all.labels[i], truth.labels[i]);
            }
        }
    }

    #[test]
    fn make_split_is_seeded() {
        let spec = SynthSpec {
            k_true: 3,
            d: 2,
            per_class: 30,
            center_scale: 5.0,
            sigma: 0.3,
            k_labelled: 2,
            labelled_fraction: 0.4,
            seed: 11,
        };
        let (v1, t1) = gen_synth(&spec).unwrap();
        let (v2, t2) = gen_synth(&spec).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn gen_with_zero_sigma_sits_on_centers() {
        let centers = Mat::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]).unwrap();
        let (_, truth) = gen_from_centers(&centers, 5, 0.0, 1, 0.5, 9).unwrap();
        for i in 0..truth.n() {
            let c = truth.labels[i].unwrap() as usize;
            assert_eq!(truth.x.row(i), centers.row(c));
        }
    }

    #[test]
    fn nearest_center_recovers_truth_at_wide_separation() {
        // Grid centers 10 apart with sigma = 0.5: 20-sigma separation, so
        // nearest-center classification must equal the generator's labels.
        let centers = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![10.0, 0.0],
            vec![0.0, 10.0],
            vec![10.0, 10.0],
        ])
        .unwrap();
        let (_, truth) = gen_from_centers(&centers, 50, 0.5, 2, 0.5, 21).unwrap();
        for i in 0..truth.n() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..4 {
                let d = crate::linalg::dist_sq(truth.x.row(i), centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assert_eq!(Some(best as i64), truth.labels[i]);
        }
    }

    #[test]
    fn partial_overlap_filters_only_nonoverlap_old_unlabelled() {
        let spec = SynthSpec {
            k_true: 4,
            d: 2,
            per_class: 20,
            center_scale: 8.0,
            sigma: 0.4,
            k_labelled: 2,
            labelled_fraction: 0.5,
            seed: 5,
        };
        let (visible, truth) = gen_synth(&spec).unwrap();

        // Full overlap: nothing changes.
        let (same, _) = partial_overlap_split(&visible, &truth, 2).unwrap();
        assert_eq!(same, visible);

        // Overlap 1: unlabelled instances of old class 1 disappear; its
        // labelled ones stay; new classes unaffected.
        let (cut, cut_truth) = partial_overlap_split(&visible, &truth, 1).unwrap();
        assert!(cut.n() < visible.n());
        for i in 0..cut.n() {
            if cut.labels[i].is_none() {
                let c = cut_truth.labels[i].unwrap();
                assert!(c != 1, "unlabelled old-class-1 instance survived");
            }
        }
        let labelled_of_1 =
            |ds: &FeatureDataset| ds.labels.iter().filter(|l| **l == Some(1)).count();
        assert_eq!(labelled_of_1(&cut), labelled_of_1(&visible));
        let new_count = |t: &FeatureDataset| {
            t.labels.iter().filter(|l| matches!(l, Some(c) if *c >= 2)).count()
        };
        assert_eq!(new_count(&cut_truth), new_count(&truth));

        assert!(matches!(
            partial_overlap_split(&visible, &truth, 3),
            Err(Error::OverlapTooLarge(_))
        ));
    }

    #[test]
    fn format_inference_from_extension() {
        assert_eq!(FileFormat::from_path(Path::new("a/b.csv")).unwrap(), FileFormat::Csv);
        assert_eq!(FileFormat::from_path(Path::new("x.gpcf")).unwrap(), FileFormat::Gpcf);
        assert!(FileFormat::from_path(Path::new("x.dat")).is_err());
    }
}
