use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_features, FeatureSchema, ProxyModel};
use crate::binio::{read_array, read_f32, read_u32, write_f32, write_u32};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LLMRFEAT";

/// Row-per-record feature values with the sample_id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema_version: u32,
    pub ids: Vec<String>,
    pub values: Array2<f64>,
}

/// Provenance of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub schema_version: u32,
    pub schema_fingerprint: String,
    pub dim: usize,
    pub rows: usize,
    pub dataset_id_hash: String,
    pub proxy_fingerprint: Option<String>,
    pub proxy_trained_on: Option<String>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Column means; the baseline used by group attribution.
    pub fn column_means(&self) -> Array1<f64> {
        self.values
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.dim()))
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows reordered to follow `dataset`. Every record must have a row.
    pub fn aligned_to(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        let index = self.index();
        let mut values = Array2::zeros((dataset.len(), self.dim()));
        for (mut row, r) in values.rows_mut().into_iter().zip(&dataset.records) {
            let i = *index
                .get(r.sample_id.as_str())
                .ok_or_else(|| Error::MissingId(r.sample_id.clone()))?;
            row.assign(&self.values.row(i));
        }
        Ok(FeatureMatrix {
            schema_version: self.schema_version,
            ids: dataset.records.iter().map(|r| r.sample_id.clone()).collect(),
            values,
        })
    }

    /// `LLMRFEAT`, u32 version, u32 n, u32 dim, n×dim f32 LE, then newline-delimited ids.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let n = u32::try_from(self.len()).map_err(|_| Error::Format("too many rows".into()))?;
        let dim = u32::try_from(self.dim()).map_err(|_| Error::Format("dimension too large".into()))?;
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        write_u32(&mut w, self.schema_version).map_err(io)?;
        write_u32(&mut w, n).map_err(io)?;
        write_u32(&mut w, dim).map_err(io)?;
        for v in &self.values {
            write_f32(&mut w, *v as f32).map_err(io)?;
        }
        for id in &self.ids {
            if id.contains('\n') {
                return Err(Error::Format(format!("sample_id {id:?} contains a newline")));
            }
            w.write_all(id.as_bytes()).map_err(io)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let header = |e: std::io::Error| Error::Format(format!("feature header: {e}"));
        let magic: [u8; 8] = read_array(&mut r).map_err(header)?;
        if &magic != MAGIC {
            return Err(Error::Format("feature file magic mismatch".into()));
        }
        let schema_version = read_u32(&mut r).map_err(header)?;
        let n = read_u32(&mut r).map_err(header)? as usize;
        let dim = read_u32(&mut r).map_err(header)? as usize;
        let mut values = Array2::zeros((n, dim));
        for (i, mut row) in values.rows_mut().into_iter().enumerate() {
            for v in row.iter_mut() {
                *v = f64::from(read_f32(&mut r).map_err(|_| Error::Truncated(i))?);
            }
        }
        let mut tail = String::new();
        r.read_to_string(&mut tail)
            .map_err(|e| Error::Format(format!("feature id index: {e}")))?;
        let ids: Vec<String> = tail.lines().map(str::to_string).collect();
        if ids.len() != n {
            return Err(Error::Format(format!("feature id index has {} ids for {n} rows", ids.len())));
        }
        Ok(Self {
            schema_version,
            ids,
            values,
        })
    }
}

/// Extracts features for every record, in dataset order.
pub fn featurize_dataset(
    d: &Dataset,
    schema: &FeatureSchema,
    proxy: Option<&ProxyModel>,
) -> Result<(FeatureMatrix, FeatureManifest)> {
    let rows: Vec<Vec<f64>> = d
        .records
        .par_iter()
        .map(|r| {
            extract_features(&r.prompt, schema, proxy)
                .map(|v| v.values)
                .map_err(|e| Error::in_record(&r.sample_id, e))
        })
        .collect::<Result<_>>()?;
    let dim = schema.dim();
    let mut values = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in values.rows_mut().into_iter().zip(&rows) {
        dst.assign(&ArrayView1::from(src.as_slice()));
    }
    let matrix = FeatureMatrix {
        schema_version: schema.version,
        ids: d.records.iter().map(|r| r.sample_id.clone()).collect(),
        values,
    };
    let manifest = FeatureManifest {
        schema_version: schema.version,
        schema_fingerprint: schema.fingerprint(),
        dim,
        rows: matrix.len(),
        dataset_id_hash: d.id_hash(),
        proxy_fingerprint: proxy.map(ProxyModel::fingerprint),
        proxy_trained_on: proxy.map(|p| p.trained_on.clone()),
    };
    Ok((matrix, manifest))
}
