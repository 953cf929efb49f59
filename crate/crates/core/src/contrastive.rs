//! Similarity measures and the InfoNCE objective over predicted queries and
//! momentum-encoded keys.
//!
//! For a batch of `K` predicted queries `q'_i` and keys `k'_j`, the key with
//! the same index is the positive and the other `K - 1` are negatives:
//!
//! ```text
//! L = mean_i [ -ln( exp(s_ii) / Σ_j exp(s_ij) ) ],   s_ij = sim(q'_i, k'_j)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{identity, BoundParams, ParameterSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SimilarityKind {
    Dot,
    /// `qᵀ W k` with a learnable square `W`.
    #[default]
    Bilinear,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Dot => "dot",
            SimilarityKind::Bilinear => "bilinear",
        })
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(SimilarityKind::Dot),
            "bilinear" => Ok(SimilarityKind::Bilinear),
            other => Err(Error::Parse(format!("unknown similarity {other:?}"))),
        }
    }
}

const W: &str = "w";

/// A similarity measure together with its learnable weights (if any).
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity<R> {
    kind: SimilarityKind,
    dim: usize,
    pub params: ParameterSet<R>,
}

impl<R: Real> Similarity<R> {
    /// Bilinear weights start at the identity, where both kinds agree.
    pub fn new(kind: SimilarityKind, dim: usize) -> Result<Self> {
        let mut params = ParameterSet::new();
        if kind == SimilarityKind::Bilinear {
            params.insert(W, identity(dim))?;
        }
        Ok(Similarity { kind, dim, params })
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn similarity(&self, q: &[R], k: &[R]) -> Result<R> {
        if q.len() != self.dim || k.len() != self.dim {
            return Err(Error::config(format!(
                "similarity over dimension {} got vectors of length {} and {}",
                self.dim,
                q.len(),
                k.len()
            )));
        }
        Ok(match self.kind {
            SimilarityKind::Dot => q.iter().zip(k).map(|(&a, &b)| a * b).sum(),
            SimilarityKind::Bilinear => {
                let w = self.params.get(W)?.data();
                q.iter()
                    .enumerate()
                    .map(|(i, &qi)| qi * w[i * self.dim..(i + 1) * self.dim].iter().zip(k).map(|(&a, &b)| a * b).sum::<R>())
                    .sum()
            }
        })
    }

    /// `[K, K]` matrix of `sim(query_i, key_j)`. Keys are detached first,
    /// so the result never carries gradient back into them.
    pub fn logits(&self, tape: &mut Tape<R>, p: &BoundParams, queries: Var, keys: Var) -> Result<Var> {
        for v in [queries, keys] {
            let s = tape.value(v).shape();
            if s.len() != 2 || s[1] != self.dim {
                return Err(Error::config(format!(
                    "contrastive inputs must be [K, {}], got {s:?}",
                    self.dim
                )));
            }
        }
        if tape.value(queries).rows() != tape.value(keys).rows() {
            return Err(Error::config("query and key counts differ"));
        }
        let keys = tape.detach(keys);
        match self.kind {
            SimilarityKind::Dot => tape.matmul_nt(queries, keys),
            SimilarityKind::Bilinear => {
                let qw = tape.matmul(queries, p.get(W)?)?;
                tape.matmul_nt(qw, keys)
            }
        }
    }
}

/// Predicted queries paired index-by-index with their positive keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch<R> {
    pub queries: Tensor<R>,
    pub keys: Tensor<R>,
}

impl<R: Real> ContrastiveBatch<R> {
    pub fn new(queries: Tensor<R>, keys: Tensor<R>) -> Result<Self> {
        if queries.shape().len() != 2 || queries.shape() != keys.shape() {
            return Err(Error::config(format!(
                "contrastive batch needs equal [K, d] shapes, got {:?} and {:?}",
                queries.shape(),
                keys.shape()
            )));
        }
        if queries.rows() == 0 {
            return Err(Error::config("contrastive batch needs K >= 1"));
        }
        Ok(ContrastiveBatch { queries, keys })
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean InfoNCE loss of a `[K, K]` logit matrix whose diagonal holds the
/// positives.
pub fn info_nce_from_logits<R: Real>(tape: &mut Tape<R>, logits: Var) -> Result<Var> {
    let k = tape.value(logits).rows();
    let targets: Vec<usize> = (0..k).collect();
    tape.cross_entropy(logits, &targets)
}

/// InfoNCE of `queries` (on tape) against `keys`.
pub fn info_nce<R: Real>(
    tape: &mut Tape<R>,
    sim: &Similarity<R>,
    p: &BoundParams,
    queries: Var,
    keys: Var,
) -> Result<Var> {
    if tape.value(queries).rows() == 0 {
        return Err(Error::config("contrastive batch needs K >= 1"));
    }
    let logits = sim.logits(tape, p, queries, keys)?;
    info_nce_from_logits(tape, logits)
}

/// Loss value for a plain batch, without keeping a tape around.
pub fn info_nce_loss<R: Real>(batch: &ContrastiveBatch<R>, sim: &Similarity<R>) -> Result<R> {
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&sim.params);
    let q = tape.constant(batch.queries.clone());
    let k = tape.constant(batch.keys.clone());
    let loss = info_nce(&mut tape, sim, &p, q, k)?;
    Ok(tape.value(loss).data()[0])
}
