//! Plaintext tables: CSV ingestion and export, synthetic data, and the
//! brute-force kNN every scheme is checked against.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sknn_core::numerics::{Scaled, DEFAULT_DATA_SCALE};
use sknn_core::select::{top_k, RecordId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {row}, column {col}: {msg}")]
    Parse { row: u64, col: usize, msg: String },
    #[error("duplicate id {0}")]
    DuplicateId(RecordId),
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} exceeds database size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub d: usize,
    pub points: Vec<(RecordId, Vec<Scaled>)>,
}

impl Dataset {
    pub fn new(d: usize, points: Vec<(RecordId, Vec<Scaled>)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        for (id, p) in &points {
            if p.len() != d {
                return Err(DatasetError::DimensionMismatch { expected: d, got: p.len() });
            }
            if !seen.insert(*id) {
                return Err(DatasetError::DuplicateId(*id));
            }
        }
        Ok(Dataset { d, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniform random points with `scale` decimals in `[-bound, bound]`,
    /// ids `0..m`.
    pub fn synthetic(m: usize, d: usize, bound: i64, scale: u32, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let unit = 10i64.pow(scale);
        let points = (0..m as RecordId)
            .map(|id| {
                let p = (0..d)
                    .map(|_| Scaled::new(rng.gen_range(-bound * unit..=bound * unit), scale))
                    .collect();
                (id, p)
            })
            .collect();
        Dataset { d, points }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.is_empty() || &header[0] != "id" {
            return Err(DatasetError::Parse { row: 1, col: 1, msg: "header must start with `id`".into() });
        }
        let d = header.len() - 1;
        let mut points = Vec::new();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(DatasetError::Parse {
                    row,
                    col: rec.len().min(header.len()) + 1,
                    msg: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let id: RecordId = rec[0]
                .parse()
                .map_err(|e| DatasetError::Parse { row, col: 1, msg: format!("bad id: {e}") })?;
            if !seen.insert(id) {
                return Err(DatasetError::DuplicateId(id));
            }
            let p = (1..=d)
                .map(|col| {
                    let x: Scaled = rec[col]
                        .parse()
                        .map_err(|e| DatasetError::Parse { row, col: col + 1, msg: format!("{e}") })?;
                    if x.canonical().scale() > DEFAULT_DATA_SCALE {
                        return Err(DatasetError::Parse {
                            row,
                            col: col + 1,
                            msg: format!("more than {DEFAULT_DATA_SCALE} decimals"),
                        });
                    }
                    Ok(x)
                })
                .collect::<Result<Vec<_>>>()?;
            points.push((id, p));
        }
        Ok(Dataset { d, points })
    }

    pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.d).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (id, p) in &self.points {
            let mut row = vec![id.to_string()];
            row.extend(p.iter().map(Scaled::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub fn squared_distance(a: &[Scaled], b: &[Scaled]) -> Scaled {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x - y;
            &diff * &diff
        })
        .sum()
}

/// Exact squared-Euclidean top-k, ties by ascending id.
pub fn plaintext_knn(ds: &Dataset, q: &[Scaled], k: usize) -> Result<Vec<RecordId>> {
    if q.len() != ds.d {
        return Err(DatasetError::DimensionMismatch { expected: ds.d, got: q.len() });
    }
    if k > ds.len() {
        return Err(DatasetError::KTooLarge { k, size: ds.len() });
    }
    Ok(top_k(ds.points.iter().map(|(id, p)| (*id, squared_distance(p, q))), k))
}
