use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_array, read_f32, read_f64, read_str16, read_u32, write_f32, write_f64, write_str16, write_u32};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LLMRCKPT";

/// Tensor names in checkpoint order.
pub const TENSOR_NAMES: [&str; 12] = [
    "W1_feat", "b1_feat", "W2_feat", "b2_feat", "W1_text", "b1_text", "W2_text", "b2_text", "W1_fuse", "b1_fuse",
    "W2_fuse", "b2_fuse",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerDims {
    /// Feature vector width.
    pub features: usize,
    /// Embedding width.
    pub text: usize,
    pub hidden: usize,
    pub models: usize,
}

impl RankerDims {
    pub fn shapes(&self) -> [Vec<usize>; 12] {
        let RankerDims {
            features: dj,
            text: dt,
            hidden: h,
            models: m,
        } = *self;
        [
            vec![h, dj],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, dt],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, 2 * h],
            vec![h],
            vec![m, h],
            vec![m],
        ]
    }
}

/// The twelve weight and bias tensors. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub feat_w1: Array2<f64>,
    pub feat_b1: Array1<f64>,
    pub feat_w2: Array2<f64>,
    pub feat_b2: Array1<f64>,
    pub text_w1: Array2<f64>,
    pub text_b1: Array1<f64>,
    pub text_w2: Array2<f64>,
    pub text_b2: Array1<f64>,
    pub fuse_w1: Array2<f64>,
    pub fuse_b1: Array1<f64>,
    pub fuse_w2: Array2<f64>,
    pub fuse_b2: Array1<f64>,
}

impl ParamSet {
    pub fn zeros(dims: RankerDims) -> Self {
        let RankerDims {
            features: dj,
            text: dt,
            hidden: h,
            models: m,
        } = dims;
        Self {
            feat_w1: Array2::zeros((h, dj)),
            feat_b1: Array1::zeros(h),
            feat_w2: Array2::zeros((h, h)),
            feat_b2: Array1::zeros(h),
            text_w1: Array2::zeros((h, dt)),
            text_b1: Array1::zeros(h),
            text_w2: Array2::zeros((h, h)),
            text_b2: Array1::zeros(h),
            fuse_w1: Array2::zeros((h, 2 * h)),
            fuse_b1: Array1::zeros(h),
            fuse_w2: Array2::zeros((m, h)),
            fuse_b2: Array1::zeros(m),
        }
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn he_uniform(dims: RankerDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in [
            &mut p.feat_w1,
            &mut p.feat_w2,
            &mut p.text_w1,
            &mut p.text_w2,
            &mut p.fuse_w1,
            &mut p.fuse_w2,
        ] {
            let bound = (6.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn dims(&self) -> RankerDims {
        RankerDims {
            features: self.feat_w1.ncols(),
            text: self.text_w1.ncols(),
            hidden: self.feat_w1.nrows(),
            models: self.fuse_w2.nrows(),
        }
    }

    pub fn slices(&self) -> [&[f64]; 12] {
        fn s(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameter tensors are contiguous")
        }
        [
            s(self.feat_w1.as_slice()),
            s(self.feat_b1.as_slice()),
            s(self.feat_w2.as_slice()),
            s(self.feat_b2.as_slice()),
            s(self.text_w1.as_slice()),
            s(self.text_b1.as_slice()),
            s(self.text_w2.as_slice()),
            s(self.text_b2.as_slice()),
            s(self.fuse_w1.as_slice()),
            s(self.fuse_b1.as_slice()),
            s(self.fuse_w2.as_slice()),
            s(self.fuse_b2.as_slice()),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 12] {
        fn s(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameter tensors are contiguous")
        }
        [
            s(self.feat_w1.as_slice_mut()),
            s(self.feat_b1.as_slice_mut()),
            s(self.feat_w2.as_slice_mut()),
            s(self.feat_b2.as_slice_mut()),
            s(self.text_w1.as_slice_mut()),
            s(self.text_b1.as_slice_mut()),
            s(self.text_w2.as_slice_mut()),
            s(self.text_b2.as_slice_mut()),
            s(self.fuse_w1.as_slice_mut()),
            s(self.fuse_b1.as_slice_mut()),
            s(self.fuse_w2.as_slice_mut()),
            s(self.fuse_b2.as_slice_mut()),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// A trained (or initialized) ranker with everything needed to check that its
/// inputs match what it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub weights: ParamSet,
    pub lambda: f64,
    pub tau: f64,
    pub dropout: f64,
    pub feature_schema_version: u32,
    pub schema_fingerprint: String,
    pub pool_fingerprint: String,
    /// Training-set feature means; the reference point for group attribution.
    pub feature_baseline: Array1<f64>,
}

impl RankerParams {
    pub fn dims(&self) -> RankerDims {
        self.weights.dims()
    }

    pub fn embedding_dim(&self) -> usize {
        self.dims().text
    }

    /// Rounds every value to `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for s in self.weights.slices_mut() {
            s.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
        self.feature_baseline.mapv_inplace(|v| f64::from(v as f32));
    }

    /// Rejects inputs built with a different schema, pool or embedding width.
    pub fn check_compatible(&self, schema_fingerprint: &str, pool_fingerprint: &str, embedding_dim: usize) -> Result<()> {
        if self.schema_fingerprint != schema_fingerprint {
            return Err(Error::FingerprintMismatch(format!(
                "checkpoint feature schema {} vs provided {}",
                short(&self.schema_fingerprint),
                short(schema_fingerprint)
            )));
        }
        if self.pool_fingerprint != pool_fingerprint {
            return Err(Error::FingerprintMismatch(format!(
                "checkpoint model pool {} vs provided {}",
                short(&self.pool_fingerprint),
                short(pool_fingerprint)
            )));
        }
        if self.embedding_dim() != embedding_dim {
            return Err(Error::DimMismatch {
                what: "embedding",
                expected: self.embedding_dim(),
                actual: embedding_dim,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// `LLMRCKPT`, u32 version, config block (h, d_j, d_t, m as u32; λ, τ, dropout as f64),
    /// u32 schema version, u32 embedding dim, pool and schema fingerprints (u16-prefixed),
    /// then each tensor as `u32 ndim, ndim × u32, f32 values`, ending with the feature baseline.
    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let d = self.dims();
        w.write_all(MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;
        for v in [d.hidden, d.features, d.text, d.models] {
            write_u32(w, v as u32)?;
        }
        write_f64(w, self.lambda)?;
        write_f64(w, self.tau)?;
        write_f64(w, self.dropout)?;
        write_u32(w, self.feature_schema_version)?;
        write_u32(w, d.text as u32)?;
        write_str16(w, &self.pool_fingerprint)?;
        write_str16(w, &self.schema_fingerprint)?;
        let mut shapes = d.shapes().to_vec();
        shapes.push(vec![d.features]);
        let mut data = self.weights.slices().to_vec();
        data.push(self.feature_baseline.as_slice().expect("contiguous"));
        for (shape, values) in shapes.iter().zip(data) {
            write_u32(w, shape.len() as u32)?;
            for s in shape {
                write_u32(w, *s as u32)?;
            }
            for v in values {
                write_f32(w, *v as f32)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut r)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |what: &str| {
            let what = what.to_string();
            move |e: std::io::Error| Error::Format(format!("checkpoint {what}: {e}"))
        };
        let magic: [u8; 8] = read_array(r).map_err(fmt("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Format("checkpoint magic mismatch".into()));
        }
        let version = read_u32(r).map_err(fmt("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims4 = [0usize; 4];
        for v in &mut dims4 {
            *v = read_u32(r).map_err(fmt("config"))? as usize;
        }
        let dims = RankerDims {
            hidden: dims4[0],
            features: dims4[1],
            text: dims4[2],
            models: dims4[3],
        };
        let lambda = read_f64(r).map_err(fmt("config"))?;
        let tau = read_f64(r).map_err(fmt("config"))?;
        let dropout = read_f64(r).map_err(fmt("config"))?;
        let feature_schema_version = read_u32(r).map_err(fmt("schema version"))?;
        let embedding_dim = read_u32(r).map_err(fmt("embedding dim"))? as usize;
        if embedding_dim != dims.text {
            return Err(Error::Format(format!(
                "checkpoint embedding dim {embedding_dim} disagrees with text branch width {}",
                dims.text
            )));
        }
        let pool_fingerprint = read_str16(r).map_err(fmt("pool fingerprint"))?;
        let schema_fingerprint = read_str16(r).map_err(fmt("schema fingerprint"))?;

        let mut weights = ParamSet::zeros(dims);
        let mut baseline = Array1::zeros(dims.features);
        let mut shapes = dims.shapes().to_vec();
        shapes.push(vec![dims.features]);
        let mut names = TENSOR_NAMES.to_vec();
        names.push("feature_baseline");
        let mut targets = weights.slices_mut().into_iter().collect::<Vec<_>>();
        targets.push(baseline.as_slice_mut().expect("contiguous"));
        for ((expected, name), dst) in shapes.iter().zip(&names).zip(targets) {
            let ndim = read_u32(r).map_err(fmt(name))? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(r).map(|v| v as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(fmt(name))?;
            if &shape != expected {
                return Err(Error::Format(format!("tensor {name} has shape {shape:?}, expected {expected:?}")));
            }
            for v in dst.iter_mut() {
                *v = f64::from(read_f32(r).map_err(fmt(name))?);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(fmt("trailer"))? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let params = RankerParams {
            weights,
            lambda,
            tau,
            dropout,
            feature_schema_version,
            schema_fingerprint,
            pool_fingerprint,
            feature_baseline: baseline,
        };
        if !params.weights.all_finite() {
            return Err(Error::Format("checkpoint contains non-finite values".into()));
        }
        Ok(params)
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}
