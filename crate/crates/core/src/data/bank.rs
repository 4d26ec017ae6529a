//! Feature bank files: `<name>.bin` of row-major little-endian f32 plus
//! `<name>.meta.json` mapping clip ids to row ranges.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankEntry {
    pub offset_rows: usize,
    pub n_rows: usize,
    pub dim: usize,
}

/// An in-memory feature bank; rows are stored flat as f32.
#[derive(Debug, Clone, Default)]
pub struct FeatureBank {
    pub entries: BTreeMap<String, BankEntry>,
    data: Vec<f32>,
}

impl FeatureBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a clip's row block. Row count 0 is allowed (clip present,
    /// no features).
    pub fn push(&mut self, clip_id: &str, rows: &[Vec<f64>], dim: usize) -> Result<(), DataError> {
        if self.entries.contains_key(clip_id) {
            return Err(DataError::Invalid(format!(
                "clip `{clip_id}` already in bank"
            )));
        }
        let offset_rows = self.data.len() / dim.max(1);
        for row in rows {
            if row.len() != dim {
                return Err(DataError::Invalid(format!(
                    "row of width {} in bank of dim {dim}",
                    row.len()
                )));
            }
            self.data.extend(row.iter().map(|v| *v as f32));
        }
        self.entries.insert(
            clip_id.to_string(),
            BankEntry {
                offset_rows,
                n_rows: rows.len(),
                dim,
            },
        );
        Ok(())
    }

    pub fn push_matrix(&mut self, clip_id: &str, m: &Tensor) -> Result<(), DataError> {
        let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
        self.push(clip_id, &rows, m.cols())
    }

    /// Rows for one clip, converted to f64. Errors on unknown ids.
    pub fn rows(&self, clip_id: &str) -> Result<Vec<Vec<f64>>, DataError> {
        let e = self
            .entries
            .get(clip_id)
            .ok_or_else(|| DataError::MissingClip(clip_id.to_string()))?;
        let mut out = Vec::with_capacity(e.n_rows);
        for r in 0..e.n_rows {
            let start = (e.offset_rows + r) * e.dim;
            out.push(self.data[start..start + e.dim].iter().map(|v| *v as f64).collect());
        }
        Ok(out)
    }

    /// Rows for one clip as a matrix, or `None` when the clip has no rows.
    pub fn matrix(&self, clip_id: &str) -> Result<Option<Tensor>, DataError> {
        let rows = self.rows(clip_id)?;
        if rows.is_empty() {
            return Ok(None);
        }
        Ok(Some(Tensor::from_rows(&rows)?))
    }

    /// Writes `<stem>.bin` and `<stem>.meta.json`.
    pub fn write(&self, stem: &Path) -> Result<(), DataError> {
        let bin_path = stem.with_extension("bin");
        let meta_path = stem.with_extension("meta.json");
        let mut w = BufWriter::new(fs::File::create(bin_path)?);
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.entries)
            .map_err(|e| DataError::Invalid(format!("meta encode: {e}")))?;
        fs::write(meta_path, meta + "\n")?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self, DataError> {
        let bin_path = stem.with_extension("bin");
        let meta_path = stem.with_extension("meta.json");
        let meta_text = fs::read_to_string(&meta_path)?;
        let entries: BTreeMap<String, BankEntry> = serde_json::from_str(&meta_text)
            .map_err(|e| DataError::Invalid(format!("meta decode {}: {e}", meta_path.display())))?;
        let bytes = fs::read(&bin_path)?;
        if bytes.len() % 4 != 0 {
            return Err(DataError::Invalid(format!(
                "{} length {} not a multiple of 4",
                bin_path.display(),
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for (clip, e) in &entries {
            if (e.offset_rows + e.n_rows) * e.dim > data.len() {
                return Err(DataError::Invalid(format!(
                    "bank entry `{clip}` extends past payload"
                )));
            }
        }
        Ok(FeatureBank { entries, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing_clip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("frames");
        let mut bank = FeatureBank::new();
        bank.push("clip_a", &[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        bank.push("clip_b", &[vec![0.5, -0.5]], 2).unwrap();
        bank.push("clip_empty", &[], 2).unwrap();
        bank.write(&stem).unwrap();

        let loaded = FeatureBank::read(&stem).unwrap();
        assert_eq!(loaded.entries, bank.entries);
        assert_eq!(loaded.rows("clip_a").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(loaded.matrix("clip_empty").unwrap().is_none());
        assert!(matches!(
            loaded.rows("nope"),
            Err(DataError::MissingClip(_))
        ));

        // Deterministic bytes.
        let stem2 = dir.path().join("frames2");
        bank.write(&stem2).unwrap();
        assert_eq!(
            std::fs::read(stem.with_extension("bin")).unwrap(),
            std::fs::read(stem2.with_extension("bin")).unwrap()
        );
        assert_eq!(
            std::fs::read(stem.with_extension("meta.json")).unwrap(),
            std::fs::read(stem2.with_extension("meta.json")).unwrap()
        );
    }

    #[test]
    fn duplicate_clip_rejected() {
        let mut bank = FeatureBank::new();
        bank.push("c", &[vec![0.0]], 1).unwrap();
        assert!(bank.push("c", &[vec![1.0]], 1).is_err());
    }
}
