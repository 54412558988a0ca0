use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::round::RoundStatus;
use crate::error::{Error, Result};
use crate::image::Image;

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub participant_id: String,
    pub image_id: String,
    pub category: String,
    pub round_id: u64,
    pub status: RoundStatus,
    pub score: u64,
    /// Path of the binary map relative to the store root.
    pub map_file: String,
}

impl MapRecord {
    fn sort_key(&self) -> (&str, &str, u64) {
        (&self.image_id, &self.participant_id, self.round_id)
    }
}

/// Append-only annotation store: one binary PGM per round plus a JSON-lines index.
#[derive(Debug)]
pub struct AnnotationStore {
    root: PathBuf,
    lock: Mutex<()>,
}

impl AnnotationStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("maps"))?;
        Ok(Self { root, lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes the map atomically (temp file + rename), then appends its index line.
    pub fn append(&self, record: &MapRecord, map: &Image) -> Result<()> {
        let _guard = self.lock.lock().expect("store lock poisoned");
        let path = self.root.join(&record.map_file);
        let tmp = path.with_extension("tmp");
        map.save_pgm(&tmp, 255)?;
        std::fs::rename(&tmp, &path)?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(INDEX_FILE))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// All records ordered by (image, participant, round), independent of insertion order.
    pub fn records(&self) -> Result<Vec<MapRecord>> {
        let path = self.root.join(INDEX_FILE);
        if !path.exists() {
            return Ok(vec![]);
        }
        let mut out = Vec::new();
        for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str::<MapRecord>(&line)
                    .map_err(|e| Error::Format(format!("{INDEX_FILE} line {}: {e}", i + 1)))?,
            );
        }
        out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(out)
    }

    pub fn load_map(&self, record: &MapRecord) -> Result<Image> {
        Image::load_pgm(self.root.join(&record.map_file))
    }

    pub fn map_file_for(round_id: u64) -> String {
        format!("maps/round-{round_id:08}.pgm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: &str, img: &str, round: u64) -> MapRecord {
        MapRecord {
            participant_id: p.into(),
            image_id: img.into(),
            category: "c".into(),
            round_id: round,
            status: RoundStatus::Won,
            score: 10,
            map_file: AnnotationStore::map_file_for(round),
        }
    }

    #[test]
    fn append_and_read_back_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        let mut m = Image::blank(4, 4);
        m.set(1, 2, 1.0);
        store.append(&rec("b", "img2", 2), &m).unwrap();
        store.append(&rec("a", "img1", 1), &m).unwrap();
        let rs = store.records().unwrap();
        assert_eq!(rs.iter().map(|r| r.round_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(store.load_map(&rs[0]).unwrap(), m);
        // reopening sees the same data
        assert_eq!(AnnotationStore::open(dir.path()).unwrap().records().unwrap(), rs);
    }
}
