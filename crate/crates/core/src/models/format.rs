//! Versioned binary container for trained models.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QOEM"
//! 4       2     format version, u16 LE
//! 6       1     model kind tag
//! 7       4     payload length, u32 LE
//! 11      n     payload (spec, metadata, learned parameters)
//! 11+n    4     CRC-32 (IEEE) of bytes 0..11+n, u32 LE
//! ```
//!
//! All integers are little-endian and floats are IEEE-754 bit patterns, so a
//! load reproduces predictions bit for bit. The full layout is documented in
//! `docs/model-format.md`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::boosting::BoostedTrees;
use super::forest::Forest;
use super::knn::{Knn, KnnWeights};
use super::linear::LinearModel;
use super::mlp::{Activation, Mlp};
use super::svr::{Kernel, Svr};
use super::tree::{Node, RegressionTree};
use super::{FitMetadata, ModelKind, ModelParams, ModelSpec, ParamValue, TrainedModel};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"QOEM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("checksum failure: file truncated or corrupted")]
    Checksum,
    #[error("unsupported model format version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u16 },
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection too large for model file"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn matrix(&mut self, m: &Matrix) {
        self.len(m.rows());
        self.len(m.cols());
        for &x in m.as_slice() {
            self.f64(x);
        }
    }
    fn tree(&mut self, t: &RegressionTree) {
        self.len(t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf { value } => {
                    self.u8(0);
                    self.f64(value);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    self.u8(1);
                    self.u32(feature);
                    self.f64(threshold);
                    self.u32(left);
                    self.u32(right);
                }
            }
        }
    }
    fn trees(&mut self, ts: &[RegressionTree]) {
        self.len(ts.len());
        for t in ts {
            self.tree(t);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Res<T> = Result<T, FormatError>;

fn malformed(what: &str) -> FormatError {
    FormatError::Malformed(what.to_string())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Res<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("unexpected end of payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Res<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Res<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Res<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Res<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Res<usize> {
        let n = self.u32()? as usize;
        // Every element occupies at least one byte.
        if n > self.buf.len() - self.pos {
            return Err(malformed("length prefix exceeds payload"));
        }
        Ok(n)
    }
    fn str(&mut self) -> Res<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("invalid UTF-8"))
    }
    fn f64s(&mut self) -> Res<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Res<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| malformed("matrix shape exceeds payload"))?;
        let data = (0..count).map(|_| self.f64()).collect::<Res<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
    fn tree(&mut self) -> Res<RegressionTree> {
        let n = self.len()?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match self.u8()? {
                0 => Node::Leaf { value: self.f64()? },
                1 => {
                    let feature = self.u32()?;
                    let threshold = self.f64()?;
                    let left = self.u32()?;
                    let right = self.u32()?;
                    if left as usize >= n || right as usize >= n {
                        return Err(malformed("tree child index out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                _ => return Err(malformed("bad tree node tag")),
            });
        }
        if nodes.is_empty() {
            return Err(malformed("empty tree"));
        }
        Ok(RegressionTree { nodes })
    }
    fn trees(&mut self) -> Res<Vec<RegressionTree>> {
        let n = self.len()?;
        (0..n).map(|_| self.tree()).collect()
    }
}

fn write_spec(w: &mut Writer, spec: &ModelSpec) {
    w.u64(spec.seed);
    w.len(spec.hyperparams.len());
    for (k, v) in &spec.hyperparams {
        w.str(k);
        match v {
            ParamValue::Num(x) => {
                w.u8(0);
                w.f64(*x);
            }
            ParamValue::Text(s) => {
                w.u8(1);
                w.str(s);
            }
        }
    }
}

fn read_spec(r: &mut Reader, kind: ModelKind) -> Res<ModelSpec> {
    let seed = r.u64()?;
    let n = r.len()?;
    let mut hyperparams = BTreeMap::new();
    for _ in 0..n {
        let k = r.str()?;
        let v = match r.u8()? {
            0 => ParamValue::Num(r.f64()?),
            1 => ParamValue::Text(r.str()?),
            _ => return Err(malformed("bad hyperparameter tag")),
        };
        hyperparams.insert(k, v);
    }
    Ok(ModelSpec {
        kind,
        hyperparams,
        seed,
    })
}

fn write_params(w: &mut Writer, p: &ModelParams) {
    match p {
        ModelParams::Svr(m) => {
            match m.kernel {
                Kernel::Rbf { gamma } => {
                    w.u8(0);
                    w.f64(gamma);
                }
                Kernel::Linear => w.u8(1),
            }
            w.f64(m.rho);
            w.f64s(&m.coef);
            w.matrix(&m.support);
        }
        ModelParams::Forest(m) => w.trees(&m.trees),
        ModelParams::Tree(t) => w.tree(t),
        ModelParams::Boosted(m) => {
            w.f64(m.init);
            w.f64(m.learning_rate);
            w.trees(&m.trees);
        }
        ModelParams::Knn(m) => {
            w.u64(m.k as u64);
            w.u8(match m.weights {
                KnnWeights::Uniform => 0,
                KnnWeights::Distance => 1,
            });
            w.matrix(&m.x);
            w.f64s(&m.y);
        }
        ModelParams::Mlp(m) => {
            w.u64(m.inputs as u64);
            w.u64(m.hidden as u64);
            w.u8(m.activation.tag());
            w.u64(m.epochs as u64);
            w.f64s(&m.w1);
            w.f64s(&m.b1);
            w.f64s(&m.w2);
            w.f64(m.b2);
        }
        ModelParams::Linear(m) => {
            w.f64s(&m.coef);
            w.f64(m.intercept);
            w.u64(m.epochs as u64);
        }
    }
}

fn read_params(r: &mut Reader, kind: ModelKind) -> Res<ModelParams> {
    Ok(match kind {
        ModelKind::Svr => {
            let kernel = match r.u8()? {
                0 => Kernel::Rbf { gamma: r.f64()? },
                1 => Kernel::Linear,
                _ => return Err(malformed("bad kernel tag")),
            };
            let rho = r.f64()?;
            let coef = r.f64s()?;
            let support = r.matrix()?;
            if support.rows() != coef.len() {
                return Err(malformed("support vector count mismatch"));
            }
            ModelParams::Svr(Svr {
                kernel,
                support,
                coef,
                rho,
            })
        }
        ModelKind::Rf => ModelParams::Forest(Forest { trees: r.trees()? }),
        ModelKind::Dt => ModelParams::Tree(r.tree()?),
        ModelKind::Gb => {
            let init = r.f64()?;
            let learning_rate = r.f64()?;
            ModelParams::Boosted(BoostedTrees {
                init,
                learning_rate,
                trees: r.trees()?,
            })
        }
        ModelKind::Knn => {
            let k = r.u64()? as usize;
            let weights = match r.u8()? {
                0 => KnnWeights::Uniform,
                1 => KnnWeights::Distance,
                _ => return Err(malformed("bad weights tag")),
            };
            let x = r.matrix()?;
            let y = r.f64s()?;
            if x.rows() != y.len() || k == 0 || k > y.len() {
                return Err(malformed("inconsistent neighbour store"));
            }
            ModelParams::Knn(Knn { k, weights, x, y })
        }
        ModelKind::Mlp => {
            let inputs = r.u64()? as usize;
            let hidden = r.u64()? as usize;
            let activation =
                Activation::from_tag(r.u8()?).ok_or_else(|| malformed("bad activation tag"))?;
            let epochs = r.u64()? as usize;
            let w1 = r.f64s()?;
            let b1 = r.f64s()?;
            let w2 = r.f64s()?;
            let b2 = r.f64()?;
            if w1.len() != inputs * hidden || b1.len() != hidden || w2.len() != hidden {
                return Err(malformed("layer shape mismatch"));
            }
            ModelParams::Mlp(Mlp {
                inputs,
                hidden,
                activation,
                w1,
                b1,
                w2,
                b2,
                epochs,
            })
        }
        ModelKind::Sgd => {
            let coef = r.f64s()?;
            let intercept = r.f64()?;
            let epochs = r.u64()? as usize;
            ModelParams::Linear(LinearModel {
                coef,
                intercept,
                epochs,
            })
        }
    })
}

/// Serializes a trained model. Identical models give identical bytes.
pub fn save_model(m: &TrainedModel) -> Vec<u8> {
    let mut payload = Writer::default();
    write_spec(&mut payload, &m.spec);
    payload.u64(m.meta.n_train as u64);
    payload.u64(m.meta.feature_count as u64);
    payload.u8(u8::from(m.converged));
    write_params(&mut payload, &m.params);

    let mut out = Writer::default();
    out.buf.extend_from_slice(MAGIC);
    out.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.u8(m.spec.kind.tag());
    out.len(payload.buf.len());
    out.buf.extend_from_slice(&payload.buf);
    let crc = crc32fast::hash(&out.buf);
    out.u32(crc);
    out.buf
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FormatError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(FormatError::Checksum);
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version });
    }
    let kind = ModelKind::from_tag(body[6]).ok_or(FormatError::UnknownKind(body[6]))?;
    let declared = u32::from_le_bytes(body[7..11].try_into().unwrap()) as usize;
    let payload = &body[HEADER_LEN..];
    if declared != payload.len() {
        return Err(malformed("payload length mismatch"));
    }

    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let spec = read_spec(&mut r, kind)?;
    let n_train = r.u64()? as usize;
    let feature_count = r.u64()? as usize;
    let converged = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(malformed("bad convergence flag")),
    };
    let params = read_params(&mut r, kind)?;
    if r.pos != payload.len() {
        return Err(malformed("trailing bytes after parameters"));
    }
    Ok(TrainedModel {
        spec,
        params,
        meta: FitMetadata {
            n_train,
            feature_count,
            training_wall_time_s: 0.0,
        },
        converged,
    })
}
