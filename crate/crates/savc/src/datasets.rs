//! Loading benchmark data from disk.
//!
//! * CIFAR-100: the binary release (`train.bin`, `test.bin`; 3074-byte
//!   records of coarse label, fine label and three 32×32 planes), looked up in
//!   `data_root` or `data_root/cifar-100-binary`.
//! * miniImageNet, CUB-200: `data_root/{train,test}/<class>/<image>`; classes
//!   are indexed in lexicographic order of their directory names and images
//!   are resized (shorter side) and center-cropped to the schedule resolution.
//! * synthetic: generated in memory.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::Deserialize;

use savc_core::data::{build_sessions, synthetic_split, Benchmark, FscilDataset, Sample, Split, SyntheticConfig};
use savc_core::Image;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

const CIFAR_RECORD: usize = 2 + 3 * 32 * 32;
const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "JPEG"];

/// Outcome of locating a benchmark on disk.
#[derive(Debug)]
pub enum DataStatus {
    Ready(Box<FscilDataset>),
    Missing { expected: PathBuf, reason: String },
}

/// Train and test samples plus the source path of every training sample.
#[derive(Debug, Default)]
pub struct RawSplits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_paths: Vec<String>,
}

/// Explicit few-shot selections, one list per incremental session. Entries
/// are training-set indices or image paths relative to the training root.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub sessions: Vec<Vec<ShotRef>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum ShotRef {
    Index(usize),
    Path(String),
}

impl SessionManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    /// Resolves every entry to a training index.
    pub fn resolve(&self, train_paths: &[String]) -> Result<Vec<Vec<usize>>> {
        self.sessions
            .iter()
            .map(|shots| {
                shots
                    .iter()
                    .map(|s| match s {
                        ShotRef::Index(i) => Ok(*i),
                        ShotRef::Path(p) => {
                            let p = p.replace('\\', "/");
                            train_paths
                                .iter()
                                .position(|t| *t == p || t.ends_with(&format!("/{p}")))
                                .ok_or_else(|| Error::Input(format!("session manifest entry {p:?} matches no training image")))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Decodes CIFAR-100 binary records using the fine labels.
pub fn parse_cifar100(bytes: &[u8], path: &Path) -> Result<Vec<Sample>> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(path, format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len())));
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let label = rec[1] as usize;
            if label >= 100 {
                return Err(Error::format(path, format!("fine label {label} out of range")));
            }
            let planes = &rec[2..];
            let image = Image::from_fn(32, 32, 3, |i, j, c| planes[c * 1024 + i * 32 + j] as f32 / 255.0);
            Ok(Sample { image, label })
        })
        .collect()
}

fn cifar_dir(root: &Path) -> Option<PathBuf> {
    [root.to_path_buf(), root.join("cifar-100-binary")].into_iter().find(|d| d.join("train.bin").is_file() && d.join("test.bin").is_file())
}

pub fn load_cifar100(root: &Path) -> Result<RawSplits> {
    let dir = cifar_dir(root).ok_or_else(|| Error::Input(format!("no train.bin/test.bin under {}", root.display())))?;
    let read = |name: &str| {
        let p = dir.join(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        parse_cifar100(&bytes, &p)
    };
    let train = read("train.bin")?;
    let test = read("test.bin")?;
    let train_paths = (0..train.len()).map(|i| i.to_string()).collect();
    Ok(RawSplits { train, test, train_paths })
}

/// Resizes the shorter side to `side` and takes the central square.
pub fn to_square(img: &image::RgbImage, side: usize) -> Image {
    let (w, h) = img.dimensions();
    let scale = side as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(side as u32);
    let nh = ((h as f64 * scale).round() as u32).max(side as u32);
    let resized = image::imageops::resize(img, nw, nh, FilterType::Triangle);
    let x0 = (nw - side as u32) / 2;
    let y0 = (nh - side as u32) / 2;
    Image::from_fn(side, side, 3, |i, j, c| resized.get_pixel(x0 + j as u32, y0 + i as u32).0[c] as f32 / 255.0)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn class_dirs(split_dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(split_dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn load_split(split_dir: &Path, classes: &[String], side: usize) -> Result<(Vec<Sample>, Vec<String>)> {
    let mut samples = Vec::new();
    let mut paths = Vec::new();
    for (label, name) in classes.iter().enumerate() {
        let dir = split_dir.join(name);
        if !dir.is_dir() {
            continue;
        }
        for file in sorted_entries(&dir)? {
            let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !IMAGE_EXTENSIONS.contains(&ext) {
                continue;
            }
            let img = image::open(&file).map_err(|e| Error::format(&file, e))?.to_rgb8();
            samples.push(Sample { image: to_square(&img, side), label });
            paths.push(format!("{name}/{}", file.file_name().and_then(|f| f.to_str()).unwrap_or_default()));
        }
    }
    Ok((samples, paths))
}

/// Loads a `train/<class>/…`, `test/<class>/…` tree.
pub fn load_image_folder(root: &Path, side: usize) -> Result<RawSplits> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    let classes: Vec<String> =
        class_dirs(&train_dir)?.iter().filter_map(|p| p.file_name().and_then(|f| f.to_str()).map(String::from)).collect();
    if classes.is_empty() {
        return Err(Error::Input(format!("no class directories under {}", train_dir.display())));
    }
    let (train, train_paths) = load_split(&train_dir, &classes, side)?;
    let (test, _) = load_split(&test_dir, &classes, side)?;
    Ok(RawSplits { train, test, train_paths })
}

pub fn synthetic_splits(cfg: &SyntheticConfig, seed: u64) -> Result<RawSplits> {
    let cfg = SyntheticConfig { seed, ..*cfg };
    let train = synthetic_split(&cfg, Split::Train)?;
    let test = synthetic_split(&cfg, Split::Test)?;
    let train_paths = (0..train.len()).map(|i| i.to_string()).collect();
    Ok(RawSplits { train, test, train_paths })
}

fn expected_location(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data_root.clone().unwrap_or_else(|| PathBuf::from("data").join(cfg.benchmark.as_str()))
}

/// Loads the configured benchmark and partitions it into sessions. Real
/// benchmarks whose files are absent yield [`DataStatus::Missing`].
pub fn load(cfg: &ExperimentConfig) -> Result<DataStatus> {
    let schedule = cfg.schedule();
    let raw = match cfg.benchmark {
        Benchmark::Synthetic => {
            let synth = SyntheticConfig { resolution: schedule.resolution, ..cfg.synthetic };
            let mut raw = synthetic_splits(&synth, cfg.seed)?;
            let total = schedule.total_classes();
            raw.train.retain(|s| s.label < total);
            raw.test.retain(|s| s.label < total);
            raw.train_paths.truncate(raw.train.len());
            raw
        }
        Benchmark::Cifar100 => {
            let root = expected_location(cfg);
            if cifar_dir(&root).is_none() {
                return Ok(DataStatus::Missing { expected: root, reason: "train.bin and test.bin not found".into() });
            }
            load_cifar100(&root)?
        }
        Benchmark::MiniImagenet | Benchmark::Cub200 => {
            let root = expected_location(cfg);
            if !root.join("train").is_dir() || !root.join("test").is_dir() {
                return Ok(DataStatus::Missing { expected: root, reason: "train/ and test/ directories not found".into() });
            }
            load_image_folder(&root, schedule.resolution)?
        }
    };
    let shots = match &cfg.session_manifest {
        Some(p) => Some(SessionManifest::read(p)?.resolve(&raw.train_paths)?),
        None => None,
    };
    let ds = build_sessions(schedule, raw.train, raw.test, shots.as_deref())?;
    Ok(DataStatus::Ready(Box::new(ds)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[1] = 7;
        rec[2 + 5] = 255;
        rec[2 + 1024 + 32] = 51;
        let s = parse_cifar100(&rec, Path::new("x")).unwrap();
        assert_eq!(s[0].label, 7);
        assert_eq!(s[0].image.get(0, 5, 0), 1.0);
        assert!((s[0].image.get(1, 0, 1) - 0.2).abs() < 1e-6);
        assert!(parse_cifar100(&rec[1..], Path::new("x")).is_err());
    }

    #[test]
    fn center_crop_of_wide_image() {
        let img =
            image::RgbImage::from_fn(40, 20, |x, _| if (10..30).contains(&x) { image::Rgb([255, 0, 0]) } else { image::Rgb([0, 0, 255]) });
        let sq = to_square(&img, 10);
        assert_eq!((sq.height(), sq.width()), (10, 10));
        assert!(sq.get(5, 5, 0) > 0.9);
    }

    #[test]
    fn manifest_paths_resolve() {
        let m: SessionManifest = serde_json::from_str(r#"{"sessions": [[3, "cat/b.png"]]}"#).unwrap();
        let paths = vec!["cat/a.png".to_string(), "cat/b.png".to_string()];
        assert_eq!(m.resolve(&paths).unwrap(), vec![vec![3, 1]]);
        let bad: SessionManifest = serde_json::from_str(r#"{"sessions": [["dog/x.png"]]}"#).unwrap();
        assert!(bad.resolve(&paths).is_err());
    }
}
