//! Slice-series assembly, manifest parsing and per-split dataset statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::category::{Category, Sex, Split};
use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Shape3, Volume};

fn decode_slice(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("expected 8- or 16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    Ok((h, w, values))
}

/// Stacks grayscale slices, in the given order, into a raw-domain volume.
///
/// Pixel values are widened to `f32` without rescaling.
pub fn assemble_volume<P: AsRef<Path>>(slice_paths: &[P]) -> Result<Volume> {
    let first = slice_paths.first().ok_or(Error::EmptySeries)?;
    let (h, w, mut data) = decode_slice(first.as_ref())?;
    data.reserve(h * w * (slice_paths.len() - 1));
    for (index, path) in slice_paths.iter().enumerate().skip(1) {
        let (sh, sw, values) = decode_slice(path.as_ref())?;
        if (sh, sw) != (h, w) {
            return Err(Error::InconsistentSlices {
                index,
                expected: (h, w),
                found: (sh, sw),
            });
        }
        data.extend(values);
    }
    Volume::new(
        Shape3::new(slice_paths.len(), h, w),
        data,
        IntensityDomain::Raw,
    )
}

/// Compares file names so that embedded digit runs sort numerically
/// (`slice_2.png` before `slice_10.png`).
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    use std::cmp::Ordering;

    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let na = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let (da, db) = (&a[..na], &b[..nb]);
                let ta = trim_zeros(da);
                let tb = trim_zeros(db);
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                let ord = ord.then_with(|| na.cmp(&nb));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[na..];
                b = &b[nb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let k = digits.iter().take_while(|&&c| c == b'0').count();
    &digits[k..]
}

/// Lists the `.png` files of a slice directory in natural numeric order.
pub fn list_slices(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort_by(|a, b| {
        natural_cmp(
            &a.file_name().unwrap_or_default().to_string_lossy(),
            &b.file_name().unwrap_or_default().to_string_lossy(),
        )
    });
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub path: PathBuf,
    pub label: Category,
    pub sex: Sex,
    pub split: Split,
}

/// Ordered scan records with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ScanRecord>,
}

pub const MANIFEST_HEADER: [&str; 5] = ["scan_id", "path", "label", "sex", "split"];

impl Manifest {
    pub fn new(records: Vec<ScanRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.scan_id.as_str()) {
                return Err(Error::DuplicateId(r.scan_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, scan_id: &str) -> Option<&ScanRecord> {
        self.records.iter().find(|r| r.scan_id == scan_id)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Schema {
                row: 0,
                reason: format!("expected header {}, got {}", MANIFEST_HEADER.join(","), header.join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Schema {
                    row,
                    reason: format!("expected 5 fields, got {}", rec.len()),
                });
            }
            let field = |k: usize| rec[k].trim();
            let schema = |reason: String| Error::Schema { row, reason };
            if field(0).is_empty() {
                return Err(schema("empty scan_id".into()));
            }
            records.push(ScanRecord {
                scan_id: field(0).to_string(),
                path: PathBuf::from(field(1)),
                label: field(2).parse().map_err(schema)?,
                sex: field(3).parse().map_err(schema)?,
                split: field(4).parse().map_err(schema)?,
            });
        }
        Self::new(records)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.scan_id.as_str(),
                &r.path.to_string_lossy(),
                r.label.as_str(),
                &r.sex.to_string(),
                &r.split.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

/// Reads a manifest CSV (`scan_id,path,label,sex,split`).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::from_reader(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SexCounts {
    pub female: usize,
    pub male: usize,
}

impl SexCounts {
    pub fn get(&self, sex: Sex) -> usize {
        match sex {
            Sex::Female => self.female,
            Sex::Male => self.male,
        }
    }

    fn bump(&mut self, sex: Sex) {
        match sex {
            Sex::Female => self.female += 1,
            Sex::Male => self.male += 1,
        }
    }

    pub fn sum(&self) -> usize {
        self.female + self.male
    }
}

impl std::fmt::Display for SexCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.female, self.male)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub by_label: BTreeMap<Category, SexCounts>,
    pub total: SexCounts,
}

impl Default for SplitStats {
    fn default() -> Self {
        Self {
            by_label: Category::ALL.iter().map(|&c| (c, SexCounts::default())).collect(),
            total: SexCounts::default(),
        }
    }
}

/// Per-split, per-label female/male counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: SplitStats,
    pub val: SplitStats,
}

impl DatasetStats {
    pub fn split(&self, split: Split) -> &SplitStats {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn count(&self, split: Split, label: Category, sex: Sex) -> usize {
        self.split(split).by_label[&label].get(sex)
    }

    pub fn total(&self, split: Split, sex: Sex) -> usize {
        self.split(split).total.get(sex)
    }

    /// Per-label scan counts of one split, in canonical category order.
    pub fn label_counts(&self, split: Split) -> [usize; Category::COUNT] {
        Category::ALL.map(|c| self.split(split).by_label[&c].sum())
    }

    /// Renders a female/male table in the row/column layout of the
    /// challenge statistics table (Total, A, Covid, G, Normal).
    pub fn to_table(&self) -> String {
        const COLS: [Category; 4] = [Category::A, Category::Covid, Category::G, Category::Normal];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "Set", "Total", "A", "Covid", "G", "Normal"
        );
        for (name, s) in [("Training", &self.train), ("Validation", &self.val)] {
            let _ = write!(out, "{:<12}{:>10}", name, s.total.to_string());
            for c in COLS {
                let _ = write!(out, "{:>10}", s.by_label[&c].to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Cells where `self` differs from `expected`, as human-readable lines.
    pub fn mismatches(&self, expected: &DatasetStats) -> Vec<String> {
        let mut out = Vec::new();
        for split in [Split::Train, Split::Val] {
            let (a, b) = (self.split(split), expected.split(split));
            for c in Category::ALL {
                if a.by_label[&c] != b.by_label[&c] {
                    out.push(format!(
                        "{split} {c}: computed {} expected {}",
                        a.by_label[&c], b.by_label[&c]
                    ));
                }
            }
            if a.total != b.total {
                out.push(format!(
                    "{split} total: computed {} expected {}",
                    a.total, b.total
                ));
            }
        }
        out
    }
}

/// Tallies records per `(split, label, sex)`; totals are sums over labels.
pub fn dataset_stats(manifest: &Manifest) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for r in manifest.records() {
        let s = match r.split {
            Split::Train => &mut stats.train,
            Split::Val => &mut stats.val,
        };
        s.by_label.get_mut(&r.label).expect("all labels present").bump(r.sex);
        s.total.bump(r.sex);
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, ImageBuffer, Luma};
    use proptest::prelude::*;

    fn write_png8(path: &Path, w: u32, h: u32, value: u8) {
        GrayImage::from_pixel(w, h, Luma([value])).save(path).unwrap();
    }

    #[test]
    fn stacks_identical_slices() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<_> = (0..3)
            .map(|i| {
                let p = dir.path().join(format!("s{i}.png"));
                write_png8(&p, 2, 2, 100);
                p
            })
            .collect();
        let v = assemble_volume(&paths).unwrap();
        assert_eq!(v.shape(), Shape3::new(3, 2, 2));
        assert!(v.data().iter().all(|&x| x == 100.0));
        assert_eq!(v.domain(), IntensityDomain::Raw);
    }

    #[test]
    fn wide_values_are_not_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("a.png");
        write_png8(&p8, 1, 1, 255);
        let p16 = dir.path().join("b.png");
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_pixel(1, 1, Luma([40000u16]));
        img.save(&p16).unwrap();
        assert_eq!(assemble_volume(&[&p8]).unwrap().data(), &[255.0]);
        assert_eq!(assemble_volume(&[&p16]).unwrap().data(), &[40000.0]);
    }

    #[test]
    fn slice_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        write_png8(&a, 2, 2, 1);
        write_png8(&b, 3, 2, 1);
        match assemble_volume(&[&a, &b]).unwrap_err() {
            Error::InconsistentSlices { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            assemble_volume::<PathBuf>(&[]).unwrap_err(),
            Error::EmptySeries
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(
            assemble_volume(&[&junk]).unwrap_err(),
            Error::Decode { .. }
        ));
        let rgb = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&rgb).unwrap();
        assert!(matches!(
            assemble_volume(&[&rgb]).unwrap_err(),
            Error::Decode { .. }
        ));
    }

    #[test]
    fn slices_round_trip_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        let mut expected = Vec::new();
        for i in 0..4u8 {
            let p = dir.path().join(format!("slice_{i}.png"));
            let img = GrayImage::from_fn(3, 2, |x, y| Luma([i * 20 + (y * 3 + x) as u8]));
            expected.push(img.as_raw().iter().map(|&v| v as f32).collect::<Vec<_>>());
            img.save(&p).unwrap();
            paths.push(p);
        }
        let v = assemble_volume(&paths).unwrap();
        for (d, want) in expected.iter().enumerate() {
            assert_eq!(v.slice(d), want.as_slice());
        }
    }

    #[test]
    fn natural_order() {
        let mut names = vec!["slice_10.png", "slice_2.png", "slice_1.png", "slice_02.png"];
        names.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(names, ["slice_1.png", "slice_2.png", "slice_02.png", "slice_10.png"]);
    }

    #[test]
    fn list_slices_skips_non_png() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["img_10.png", "img_9.png", "notes.txt"] {
            std::fs::write(dir.path().join(n), b"").unwrap();
        }
        let names: Vec<_> = list_slices(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["img_9.png", "img_10.png"]);
    }

    #[test]
    fn parses_rows() {
        let m = Manifest::from_reader("scan_id,path,label,sex,split\ns1,vols/s1,A,female,train\n".as_bytes()).unwrap();
        assert_eq!(
            m.records()[0],
            ScanRecord {
                scan_id: "s1".into(),
                path: "vols/s1".into(),
                label: Category::A,
                sex: Sex::Female,
                split: Split::Train,
            }
        );
    }

    #[test]
    fn manifest_errors() {
        let dup = "scan_id,path,label,sex,split\ns1,a,A,female,train\ns1,b,G,male,val\n";
        assert!(matches!(Manifest::from_reader(dup.as_bytes()).unwrap_err(), Error::DuplicateId(id) if id == "s1"));
        let bad_label = "scan_id,path,label,sex,split\ns1,a,A,female,train\ns2,a,B,female,train\n";
        assert!(matches!(Manifest::from_reader(bad_label.as_bytes()).unwrap_err(), Error::Schema { row: 2, .. }));
        let bad_sex = "scan_id,path,label,sex,split\ns1,a,A,f,train\n";
        assert!(matches!(Manifest::from_reader(bad_sex.as_bytes()).unwrap_err(), Error::Schema { row: 1, .. }));
        let bad_split = "scan_id,path,label,sex,split\ns1,a,A,male,test\n";
        assert!(matches!(Manifest::from_reader(bad_split.as_bytes()).unwrap_err(), Error::Schema { .. }));
        let bad_header = "id,path,label,sex,split\n";
        assert!(matches!(Manifest::from_reader(bad_header.as_bytes()).unwrap_err(), Error::Schema { row: 0, .. }));
    }

    #[test]
    fn empty_manifest_has_zero_stats() {
        let stats = dataset_stats(&Manifest::default());
        for split in [Split::Train, Split::Val] {
            for c in Category::ALL {
                for s in [Sex::Female, Sex::Male] {
                    assert_eq!(stats.count(split, c, s), 0);
                }
            }
            assert_eq!(stats.split(split).total, SexCounts::default());
        }
    }

    fn arb_record(i: usize) -> impl Strategy<Value = ScanRecord> {
        (0usize..4, any::<bool>(), any::<bool>()).prop_map(move |(c, m, v)| ScanRecord {
            scan_id: format!("s{i}"),
            path: format!("vols/s{i}").into(),
            label: Category::ALL[c],
            sex: if m { Sex::Male } else { Sex::Female },
            split: if v { Split::Val } else { Split::Train },
        })
    }

    fn arb_manifest() -> impl Strategy<Value = Vec<ScanRecord>> {
        (0usize..60).prop_flat_map(|n| (0..n).map(arb_record).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn counts_sum_to_split_sizes(records in arb_manifest()) {
            let m = Manifest::new(records.clone()).unwrap();
            let stats = dataset_stats(&m);
            for split in [Split::Train, Split::Val] {
                let n = records.iter().filter(|r| r.split == split).count();
                let s = stats.split(split);
                let by_label: usize = s.by_label.values().map(SexCounts::sum).sum();
                prop_assert_eq!(by_label, n);
                prop_assert_eq!(s.total.sum(), n);
                for sex in [Sex::Female, Sex::Male] {
                    let sum: usize = s.by_label.values().map(|c| c.get(sex)).sum();
                    prop_assert_eq!(sum, s.total.get(sex));
                }
            }
        }

        #[test]
        fn stats_ignore_record_order(records in arb_manifest(), rot in 0usize..60) {
            let mut shuffled = records.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            prop_assert_eq!(
                dataset_stats(&Manifest::new(records).unwrap()),
                dataset_stats(&Manifest::new(shuffled).unwrap())
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let text = "scan_id,path,label,sex,split\ns1,vols/s1,A,female,train\ns2,vols/s2,Normal,male,val\n";
        let m = Manifest::from_reader(text.as_bytes()).unwrap();
        assert_eq!(m.to_csv().unwrap(), text);
    }
}
