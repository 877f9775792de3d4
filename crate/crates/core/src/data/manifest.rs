//! Dataset manifest: one CSV row per image with label, split and provenance.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::image::{read_image, ImageBuffer};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "image_id,path,label,split,provenance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub path: String,
    pub label: usize,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    /// Unique ids and no synthetic row in val/test.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.image_id.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate image_id {:?}",
                    row.image_id
                )));
            }
        }
        check_no_synthetic_leak(self)
    }

    pub fn num_classes(&self) -> usize {
        self.rows.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn class_counts(&self, filter: impl Fn(&ManifestRow) -> bool) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for row in self.rows.iter().filter(|r| filter(r)) {
            counts[row.label] += 1;
        }
        counts
    }

    pub fn rows_where<'a>(
        &'a self,
        filter: impl Fn(&ManifestRow) -> bool + 'a,
    ) -> impl Iterator<Item = &'a ManifestRow> + 'a {
        self.rows.iter().filter(move |r| filter(r))
    }

    pub fn has_split_assignment(&self) -> bool {
        self.rows.iter().any(|r| r.split == Split::Test)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(MANIFEST_HEADER.split(','))?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != MANIFEST_HEADER {
            return Err(Error::parse(
                0,
                format!("manifest header must be `{MANIFEST_HEADER}`"),
            ));
        }
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        Self::new(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes)
    }

    /// Hex SHA-256 of the rows matching `filter`, in CSV form.
    pub fn digest(&self, filter: impl Fn(&ManifestRow) -> bool) -> Result<String> {
        let subset = DatasetManifest {
            rows: self.rows.iter().filter(|r| filter(r)).cloned().collect(),
        };
        let bytes = subset.to_csv()?;
        Ok(Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

/// Fails if any synthetic row sits in the validation or test split.
pub fn check_no_synthetic_leak(manifest: &DatasetManifest) -> Result<()> {
    match manifest.rows.iter().find(|r| {
        r.provenance == Provenance::Synthetic && matches!(r.split, Split::Val | Split::Test)
    }) {
        Some(row) => Err(Error::Data(format!(
            "synthetic image {:?} assigned to {:?}",
            row.image_id, row.split
        ))),
        None => Ok(()),
    }
}

/// `images/<class>/<image_id>.pgm`, relative to the dataset root.
pub fn image_rel_path(label: usize, image_id: &str) -> String {
    format!("images/{label}/{image_id}.pgm")
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
        for row in &manifest.rows {
            let p = root.join(&row.path);
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "manifest row {:?} points at missing file {}",
                    row.image_id,
                    p.display()
                )));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn read(&self, row: &ManifestRow) -> Result<ImageBuffer> {
        read_image(&self.root.join(&row.path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: usize, split: Split, provenance: Provenance) -> ManifestRow {
        ManifestRow {
            image_id: id.into(),
            path: image_rel_path(label, id),
            label,
            split,
            provenance,
        }
    }

    #[test]
    fn csv_round_trip_with_fixed_header() {
        let m = DatasetManifest::new(vec![
            row("a", 0, Split::Train, Provenance::Real),
            row("b", 2, Split::Test, Provenance::Real),
            row("s", 1, Split::Train, Provenance::Synthetic),
        ])
        .unwrap();
        let bytes = m.to_csv().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text
            .starts_with("image_id,path,label,split,provenance\na,images/0/a.pgm,0,train,real\n"));
        assert!(!text.contains('\r'));
        assert_eq!(DatasetManifest::from_csv(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_leaks() {
        let dup = DatasetManifest::new(vec![
            row("a", 0, Split::Train, Provenance::Real),
            row("a", 1, Split::Train, Provenance::Real),
        ]);
        assert!(matches!(dup, Err(Error::Data(_))));
        let leak = DatasetManifest::new(vec![row("s", 0, Split::Test, Provenance::Synthetic)]);
        assert!(matches!(leak, Err(Error::Data(_))));
        let leak = DatasetManifest::new(vec![row("s", 0, Split::Val, Provenance::Synthetic)]);
        assert!(matches!(leak, Err(Error::Data(_))));
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let err = DatasetManifest::from_csv(b"id,path\nx,y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
