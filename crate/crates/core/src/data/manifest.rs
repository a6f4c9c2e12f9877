use crate::error::{Error, Result};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::input(format!("split must be train or test, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

/// Tab-separated `image, label, split` records. Relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub clahe: bool,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, label, split] = fields[..] else {
                return Err(Error::input(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            entries.push(ManifestEntry {
                image: base.join(image),
                label: base.join(label),
                split: split.trim().parse()?,
            });
        }
        Ok(DatasetManifest { entries, clahe: false })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&fs::read_to_string(path)?, base)?;
        for e in &m.entries {
            for p in [&e.image, &e.label] {
                if !p.is_file() {
                    return Err(Error::input(format!("manifest references missing file {}", p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.image.display(), e.label.display(), e.split))
            .collect()
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "a.svol\ta_lbl.svol\ttrain\nb.svol\tb_lbl.svol\ttest\n\n";
        let m = DatasetManifest::parse(text, Path::new("")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.split(Split::Test).count(), 1);
        assert_eq!(m.to_text(), text.trim_end().to_string() + "\n");
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(DatasetManifest::parse("a\tb\n", Path::new("")).is_err());
        assert!(DatasetManifest::parse("a\tb\tval\n", Path::new("")).is_err());
    }

    #[test]
    fn missing_file_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "x.svol\ty.svol\ttrain\n").unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Input(_))));
    }
}
