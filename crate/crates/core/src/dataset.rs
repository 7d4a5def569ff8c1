//! Dataset preparation: degrade aligned high-resolution sources into
//! low-resolution observations and record everything in a manifest with
//! an identity-disjoint train/test split.
//!
//! The identity key defaults to the filename prefix before the first
//! underscore (subject-first naming); sorted identities are assigned
//! round-robin with every fifth held out for testing, so reruns are
//! reproducible byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::degrade::{degrade, DegradationOperator};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::image_io::{image_read, write_pgm, PixelScale};
use crate::metrics::EvalPair;
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub identity: String,
    pub split: Split,
    /// Paths relative to the manifest root.
    pub lr_file: String,
    pub hr_file: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub d: usize,
    pub sigma: f64,
    pub phase: usize,
    pub pixel_scale: PixelScale,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    /// No identity key may appear in both splits.
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.identity.as_str())
            .collect();
        for e in self.entries.iter().filter(|e| e.split == Split::Test) {
            if train.contains(e.identity.as_str()) {
                return Err(Error::invalid(format!(
                    "identity '{}' appears in both splits",
                    e.identity
                )));
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::from("glnd 1\n");
        let _ = writeln!(s, "d={}", self.d);
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "phase={}", self.phase);
        let _ = writeln!(s, "pixel_scale={}", self.pixel_scale.name());
        for e in &self.entries {
            let _ = writeln!(
                s,
                "entry={}\t{}\t{}\t{}\t{}",
                e.id,
                e.identity,
                e.split.name(),
                e.lr_file,
                e.hr_file
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut lines = text.lines();
        if lines.next() != Some("glnd 1") {
            return Err(Error::Parse(format!("{}: not a dataset manifest", path.display())));
        }
        let (mut d, mut sigma, mut phase) = (None, None, None);
        let mut pixel_scale = PixelScale::Unit;
        let mut entries = Vec::new();
        for line in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!("bad manifest line '{line}'")));
            };
            match key {
                "d" => d = Some(value.parse().map_err(|_| Error::Parse(format!("bad d '{value}'")))?),
                "sigma" => {
                    sigma = Some(value.parse().map_err(|_| Error::Parse(format!("bad sigma '{value}'")))?)
                }
                "phase" => {
                    phase = Some(value.parse().map_err(|_| Error::Parse(format!("bad phase '{value}'")))?)
                }
                "pixel_scale" => pixel_scale = value.parse()?,
                "entry" => {
                    let fields: Vec<&str> = value.split('\t').collect();
                    if fields.len() != 5 {
                        return Err(Error::Parse(format!("bad entry line '{line}'")));
                    }
                    entries.push(DatasetEntry {
                        id: fields[0].to_string(),
                        identity: fields[1].to_string(),
                        split: fields[2].parse()?,
                        lr_file: fields[3].to_string(),
                        hr_file: fields[4].to_string(),
                    });
                }
                other => return Err(Error::Parse(format!("unknown manifest key '{other}'"))),
            }
        }
        let manifest = DatasetManifest {
            root,
            d: d.ok_or_else(|| Error::Parse("manifest missing d".into()))?,
            sigma: sigma.ok_or_else(|| Error::Parse("manifest missing sigma".into()))?,
            phase: phase.ok_or_else(|| Error::Parse("manifest missing phase".into()))?,
            pixel_scale,
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Load the (low-res, high-res) pairs of one split.
    pub fn load_pairs<T: Element>(&self, split: Split) -> Result<Vec<EvalPair<T>>> {
        let mut pairs = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            pairs.push(EvalPair {
                id: e.id.clone(),
                lr: image_read(&self.root.join(&e.lr_file), self.pixel_scale)?,
                hr: image_read(&self.root.join(&e.hr_file), self.pixel_scale)?,
            });
        }
        if pairs.is_empty() {
            return Err(Error::invalid(format!("no {} entries in manifest", split.name())));
        }
        Ok(pairs)
    }
}

/// Identity key: filename prefix before the first underscore (the whole
/// stem when there is none).
fn identity_of(stem: &str) -> String {
    stem.split('_').next().unwrap_or(stem).to_string()
}

/// Degrade every aligned 128x128 grayscale source in `src_dir` and write
/// low-res PGMs plus a manifest under `out_dir`. Every fifth identity
/// (sorted) is held out as the test split.
pub fn prepare_dataset(
    src_dir: &Path,
    d: usize,
    sigma: Option<f64>,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let op = match sigma {
        Some(s) => DegradationOperator::new(d, s)?,
        None => DegradationOperator::with_default_sigma(d)?,
    };
    let mut sources: Vec<PathBuf> = fs::read_dir(src_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("pgm") | Some("png")
            )
        })
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Err(Error::invalid(format!("no .pgm/.png sources in {}", src_dir.display())));
    }

    let identities: Vec<String> = sources
        .iter()
        .map(|p| identity_of(p.file_stem().and_then(|s| s.to_str()).unwrap_or_default()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let test_identities: BTreeSet<&String> =
        identities.iter().enumerate().filter(|(i, _)| i % 5 == 0).map(|(_, v)| v).collect();

    fs::create_dir_all(out_dir.join("lr"))?;
    fs::create_dir_all(out_dir.join("hr"))?;
    let scale = PixelScale::Unit;
    let mut entries = Vec::new();
    for src in &sources {
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let hr: Tensor<f64> = image_read(src, scale)?;
        let dims = hr.shape().dims().to_vec();
        if dims != [1, 1, 128, 128] {
            return Err(Error::invalid(format!(
                "{}: sources must be 128x128 grayscale, got {}",
                src.display(),
                hr.shape()
            )));
        }
        let lr = degrade(&hr, &op)?;
        let lr_file = format!("lr/{stem}.pgm");
        let hr_file = format!("hr/{stem}.pgm");
        write_pgm(&out_dir.join(&lr_file), &lr, scale)?;
        write_pgm(&out_dir.join(&hr_file), &hr, scale)?;
        let identity = identity_of(&stem);
        let split = if test_identities.contains(&identity) {
            Split::Test
        } else {
            Split::Train
        };
        entries.push(DatasetEntry { id: stem, identity, split, lr_file, hr_file });
    }

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        d,
        sigma: op.sigma,
        phase: op.phase_offset(),
        pixel_scale: scale,
        entries,
    };
    for split in [Split::Train, Split::Test] {
        if !manifest.entries.iter().any(|e| e.split == split) {
            return Err(Error::invalid(format!(
                "empty {} split; need more distinct identities",
                split.name()
            )));
        }
    }
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
