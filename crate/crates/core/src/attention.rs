//! Attention layers.
//!
//! Sequences are time-major: an input `X` is `n × d`, one row per time
//! position. Projection matrices are stored `in × out` and applied as
//! `X · W`.
//!
//! * Self attention: `softmax(Q Kᵀ / √k) V`, per head, concatenated and
//!   projected by `W_c`.
//! * Easy attention: the score matrix `α` is itself the trainable
//!   parameter, so the layer is `α · (X W_V)` per head. There are no
//!   queries, no keys, no softmax and no projection after the concat.
//! * Sparse easy attention stores only a band of `α` (the main diagonal
//!   and `l` diagonals on each side) and scatters it into an otherwise
//!   zero `n × n` matrix on every forward pass.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(rename = "self")]
    SelfAttention,
    EasyDense,
    EasySparse,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::SelfAttention => "self",
            Variant::EasyDense => "easy_dense",
            Variant::EasySparse => "easy_sparse",
        }
    }

    pub fn is_easy(self) -> bool {
        !matches!(self, Variant::SelfAttention)
    }
}

/// Declarative layer description, as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub variant: Variant,
    /// Sequence length (time positions).
    pub n: usize,
    /// Feature width.
    pub d: usize,
    #[serde(default = "one")]
    pub heads: usize,
    /// Band half-width for sparse easy attention.
    #[serde(default)]
    pub band_l: usize,
}

fn one() -> usize {
    1
}

impl AttentionConfig {
    pub fn new(variant: Variant, n: usize, d: usize, heads: usize) -> Self {
        Self {
            variant,
            n,
            d,
            heads,
            band_l: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.heads == 0 {
            return Err(invalid("attention n, d and heads must be positive"));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "heads {} does not divide width {}",
                self.heads, self.d
            )));
        }
        if self.variant == Variant::EasySparse && self.band_l >= self.n {
            return Err(invalid(format!(
                "band half-width {} must be below sequence length {}",
                self.band_l, self.n
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d / self.heads
    }

    /// Closed-form trainable scalar count.
    pub fn param_count(&self) -> usize {
        let (n, d, h) = (self.n, self.d, self.heads);
        match self.variant {
            Variant::SelfAttention => 4 * d * d,
            Variant::EasyDense => h * n * n + d * d,
            Variant::EasySparse => h * band_len(n, self.band_l) + d * d,
        }
    }

    /// Operation count for one forward pass at batch size 1.
    ///
    /// Convention: the count covers the attention core, i.e. forming and
    /// applying the score matrix; the learned input/output projections are
    /// dense layers and are excluded. Applying an `n × n` score matrix to
    /// an `n × k` head costs one unit per multiplication and per addition,
    /// `n·k·(2n − 1)`. Self attention additionally pays for its score
    /// pipeline, measured as the `Q Kᵀ` multiply-accumulates plus four
    /// elementwise steps per score (scale, exponential, row sum,
    /// normalization), weighted by [`SCORE_PIPELINE_WEIGHT`]. The sparse
    /// variant is counted after materialization, like the dense one.
    pub fn flops_estimate(&self) -> u64 {
        let (n, h, k) = (self.n as u64, self.heads as u64, self.head_width() as u64);
        let mixing = h * n * k * (2 * n - 1);
        match self.variant {
            Variant::EasyDense | Variant::EasySparse => mixing,
            Variant::SelfAttention => {
                let raw = h * n * n * k + 4 * h * n * n;
                let (num, den) = SCORE_PIPELINE_WEIGHT;
                mixing + (2 * num * raw + den) / (2 * den)
            }
        }
    }

    /// Multiply-accumulates of the whole layer, projections included.
    pub fn forward_macs(&self) -> u64 {
        let (n, d) = (self.n as u64, self.d as u64);
        let mixing = n * n * d;
        match self.variant {
            Variant::EasyDense | Variant::EasySparse => n * d * d + mixing,
            Variant::SelfAttention => 4 * n * d * d + 2 * mixing,
        }
    }
}

/// Weight of the self-attention score pipeline in [`AttentionConfig::flops_estimate`],
/// as a rational `num / den`. Fixed once from the 3×3 single-head
/// reference pair (45 for easy attention, 81 for self attention).
pub const SCORE_PIPELINE_WEIGHT: (u64, u64) = (4, 7);

/// Number of stored entries of an `n × n` band with half-width `l`.
pub fn band_len(n: usize, l: usize) -> usize {
    (0..=l.min(n.saturating_sub(1)))
        .map(|o| if o == 0 { n } else { 2 * (n - o) })
        .sum()
}

/// Flat `n × n` positions covered by a band of half-width `l`, ordered by
/// diagonal offset (`-l..=l`) and then by row.
pub fn band_index(n: usize, l: usize) -> Vec<usize> {
    let l = l as isize;
    let n_i = n as isize;
    let mut idx = Vec::with_capacity(band_len(n, l as usize));
    for offset in -l..=l {
        for i in 0..n_i {
            let j = i + offset;
            if (0..n_i).contains(&j) {
                idx.push((i * n_i + j) as usize);
            }
        }
    }
    idx
}

/// Materializes a band storage vector into an `n × n` matrix, outside any
/// tape.
pub fn sparse_alpha_materialize(band: &[f64], n: usize, l: usize) -> Result<Tensor> {
    if l >= n {
        return Err(invalid(format!("band half-width {l} must be below {n}")));
    }
    let idx = band_index(n, l);
    if idx.len() != band.len() {
        return Err(invalid(format!(
            "band storage has {} entries, expected {}",
            band.len(),
            idx.len()
        )));
    }
    let mut data = vec![0.0; n * n];
    for (&i, &v) in idx.iter().zip(band) {
        data[i] = v;
    }
    Tensor::matrix(n, n, data)
}

fn check_width(tape: &Tape<'_>, x: Var, n: Option<usize>, d: usize) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != d || n.is_some_and(|n| s[0] != n) {
        return Err(crate::Error::Dimension {
            op: "attention",
            lhs: s.to_vec(),
            rhs: vec![n.unwrap_or(s.first().copied().unwrap_or(0)), d],
        });
    }
    Ok(())
}

/// Multi-head scaled dot-product self attention with output projection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    config: AttentionConfig,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_c: ParamId,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let bound = 1.0 / (d as f64).sqrt();
        let mut mk = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::uniform(&[d, d], bound, rng));
        Ok(Self {
            config: config.clone(),
            w_q: mk("w_q")?,
            w_k: mk("w_k")?,
            w_v: mk("w_v")?,
            w_c: mk("w_c")?,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.forward_with_scores(tape, x).map(|(out, _)| out)
    }

    /// Forward pass that also returns each head's softmax score matrix.
    pub fn forward_with_scores(&self, tape: &mut Tape<'_>, x: Var) -> Result<(Var, Vec<Var>)> {
        check_width(tape, x, None, self.config.d)?;
        let (h, k) = (self.config.heads, self.config.head_width());
        let wq = tape.param(self.w_q)?;
        let wk = tape.param(self.w_k)?;
        let wv = tape.param(self.w_v)?;
        let wc = tape.param(self.w_c)?;
        let q = tape.matmul(x, wq)?;
        let keys = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(h);
        let mut scores = Vec::with_capacity(h);
        for head in 0..h {
            let (qh, kh, vh) = if h == 1 {
                (q, keys, v)
            } else {
                (
                    tape.slice(q, 1, head * k, k)?,
                    tape.slice(keys, 1, head * k, k)?,
                    tape.slice(v, 1, head * k, k)?,
                )
            };
            let logits = tape.matmul_nt(qh, kh)?;
            let logits = tape.scale(logits, 1.0 / (k as f64).sqrt())?;
            let alpha = tape.softmax_rows(logits)?;
            scores.push(alpha);
            heads.push(tape.matmul(alpha, vh)?);
        }
        let merged = if h == 1 { heads[0] } else { tape.concat(&heads, 1)? };
        Ok((tape.matmul(merged, wc)?, scores))
    }
}

#[derive(Clone, Debug)]
enum AlphaStorage {
    Dense(Vec<ParamId>),
    Band {
        heads: Vec<ParamId>,
        index: Arc<Vec<usize>>,
    },
}

/// Dense, sparse and multi-head easy attention.
#[derive(Clone, Debug)]
pub struct EasyAttention {
    config: AttentionConfig,
    alpha: AlphaStorage,
    pub w_v: ParamId,
}

impl EasyAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if !config.variant.is_easy() {
            return Err(invalid("easy attention requires an easy_* variant"));
        }
        let (n, d) = (config.n, config.d);
        let alpha_bound = 1.0 / (n as f64).sqrt();
        let alpha = match config.variant {
            Variant::EasyDense => AlphaStorage::Dense(
                (0..config.heads)
                    .map(|h| {
                        store.add(
                            format!("{prefix}.alpha.{h}"),
                            Tensor::uniform(&[n, n], alpha_bound, rng),
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => {
                let index = Arc::new(band_index(n, config.band_l));
                let heads = (0..config.heads)
                    .map(|h| {
                        store.add(
                            format!("{prefix}.alpha_band.{h}"),
                            Tensor::uniform(&[index.len()], alpha_bound, rng),
                        )
                    })
                    .collect::<Result<_>>()?;
                AlphaStorage::Band { heads, index }
            }
        };
        let w_v = store.add(
            format!("{prefix}.w_v"),
            Tensor::uniform(&[d, d], 1.0 / (d as f64).sqrt(), rng),
        )?;
        Ok(Self {
            config: config.clone(),
            alpha,
            w_v,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    /// Parameter ids holding the score storage, one per head.
    pub fn alpha_params(&self) -> &[ParamId] {
        match &self.alpha {
            AlphaStorage::Dense(ids) => ids,
            AlphaStorage::Band { heads, .. } => heads,
        }
    }

    /// Records the `n × n` score matrix of `head`.
    pub fn alpha(&self, tape: &mut Tape<'_>, head: usize) -> Result<Var> {
        let n = self.config.n;
        match &self.alpha {
            AlphaStorage::Dense(ids) => tape.param(ids[head]),
            AlphaStorage::Band { heads, index } => {
                let band = tape.param(heads[head])?;
                tape.scatter(band, &[n, n], Arc::clone(index))
            }
        }
    }

    /// The score matrix of `head` as a plain tensor.
    pub fn alpha_matrix(&self, store: &ParamStore, head: usize) -> Result<Tensor> {
        match &self.alpha {
            AlphaStorage::Dense(ids) => Ok(store.get(ids[head]).clone()),
            AlphaStorage::Band { heads, .. } => {
                sparse_alpha_materialize(store.get(heads[head]).data(), self.config.n, self.config.band_l)
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        check_width(tape, x, Some(self.config.n), self.config.d)?;
        let (h, k) = (self.config.heads, self.config.head_width());
        let wv = tape.param(self.w_v)?;
        let v = tape.matmul(x, wv)?;
        let mut outs = Vec::with_capacity(h);
        for head in 0..h {
            let vh = if h == 1 { v } else { tape.slice(v, 1, head * k, k)? };
            let alpha = self.alpha(tape, head)?;
            outs.push(tape.matmul(alpha, vh)?);
        }
        if h == 1 {
            Ok(outs[0])
        } else {
            tape.concat(&outs, 1)
        }
    }
}

/// Either attention flavour behind one interface.
#[derive(Clone, Debug)]
pub enum AttentionLayer {
    SelfAttention(SelfAttention),
    Easy(EasyAttention),
}

impl AttentionLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(match config.variant {
            Variant::SelfAttention => Self::SelfAttention(SelfAttention::new(store, prefix, config, rng)?),
            _ => Self::Easy(EasyAttention::new(store, prefix, config, rng)?),
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        match self {
            Self::SelfAttention(a) => a.config(),
            Self::Easy(a) => a.config(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self {
            Self::SelfAttention(a) => a.forward(tape, x),
            Self::Easy(a) => a.forward(tape, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn band_geometry() {
        assert_eq!(band_len(5, 0), 5);
        assert_eq!(band_len(5, 1), 13);
        assert_eq!(band_len(4, 3), 16);
        let diag = sparse_alpha_materialize(&[1.0, 2.0, 3.0], 3, 0).unwrap();
        assert_eq!(diag.data(), &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(sparse_alpha_materialize(&[1.0; 9], 3, 3).is_err());
    }

    #[test]
    fn full_band_covers_every_position() {
        let n = 5;
        let mut idx = band_index(n, n - 1);
        idx.sort_unstable();
        assert_eq!(idx, (0..n * n).collect::<Vec<_>>());
    }

    #[test]
    fn reference_counts() {
        let easy = AttentionConfig::new(Variant::EasyDense, 3, 3, 1);
        let selfa = AttentionConfig::new(Variant::SelfAttention, 3, 3, 1);
        assert_eq!(easy.param_count(), 18);
        assert_eq!(selfa.param_count(), 36);
        assert_eq!(easy.flops_estimate(), 45);
        assert_eq!(selfa.flops_estimate(), 81);
        let tiny = AttentionConfig::new(Variant::EasyDense, 1, 1, 1);
        assert!(tiny.flops_estimate() > 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(AttentionConfig::new(Variant::EasyDense, 4, 6, 4).validate().is_err());
        let mut sparse = AttentionConfig::new(Variant::EasySparse, 4, 4, 1);
        sparse.band_l = 4;
        assert!(sparse.validate().is_err());
    }

    #[test]
    fn easy_rejects_wrong_sequence_length() {
        let mut store = ParamStore::new();
        let cfg = AttentionConfig::new(Variant::EasyDense, 4, 2, 1);
        let layer = EasyAttention::new(&mut store, "a", &cfg, &mut rng_for(1, "t")).unwrap();
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(Tensor::zeros(&[5, 2])).unwrap();
        assert!(layer.forward(&mut tape, x).is_err());
    }
}
