use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::attention::SelfAttention;
use crate::error::{invalid, Result};
use crate::tensor::{ParamStore, Tape, Tensor};

/// Thin SVD with singular values in descending order. Each singular pair
/// is signed so the largest-magnitude entry of `u` is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Svd {
    /// `m × r`, columns are left singular vectors.
    pub u: Tensor,
    pub s: Vec<f64>,
    /// `n × r`, columns are right singular vectors.
    pub v: Tensor,
}

impl Svd {
    pub fn reconstruct(&self) -> Tensor {
        let (m, r) = (self.u.rows(), self.s.len());
        let n = self.v.rows();
        Tensor::from_fn(&[m, n], |k| {
            let (i, j) = (k / n, k % n);
            (0..r).map(|q| self.u.at(i, q) * self.s[q] * self.v.at(j, q)).sum()
        })
    }

    pub fn left(&self, q: usize) -> Vec<f64> {
        (0..self.u.rows()).map(|i| self.u.at(i, q)).collect()
    }

    pub fn right(&self, q: usize) -> Vec<f64> {
        (0..self.v.rows()).map(|i| self.v.at(i, q)).collect()
    }
}

pub fn svd(a: &Tensor) -> Result<Svd> {
    if a.rank() != 2 {
        return Err(invalid("svd expects a matrix"));
    }
    let (m, n) = (a.rows(), a.cols());
    let mat = Mat::from_fn(m, n, |i, j| a.at(i, j));
    let dec = mat
        .thin_svd()
        .map_err(|e| invalid(format!("svd did not converge: {e:?}")))?;
    let (u, s_diag, v) = (dec.U(), dec.S(), dec.V());
    let r = m.min(n);
    let values: Vec<f64> = (0..r).map(|q| s_diag[q]).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| values[y].total_cmp(&values[x]).then(x.cmp(&y)));
    let mut ud = vec![0.0; m * r];
    let mut vd = vec![0.0; n * r];
    let mut s = Vec::with_capacity(r);
    for (q, &src) in order.iter().enumerate() {
        let pivot = (0..m)
            .map(|i| u[(i, src)])
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            ud[i * r + q] = sign * u[(i, src)];
        }
        for j in 0..n {
            vd[j * r + q] = sign * v[(j, src)];
        }
        s.push(values[src]);
    }
    Ok(Svd {
        u: Tensor::matrix(m, r, ud)?,
        s,
        v: Tensor::matrix(n, r, vd)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFamily {
    /// The dyadic product `y_i y_jᵀ` of two phase columns.
    SelfCombination,
    /// `W_k W_qᵀ y_i y_jᵀ`, the combination seen through the learned
    /// query/key product.
    Weighted,
    /// The softmax score matrix of the layer.
    Score,
}

impl MatrixFamily {
    pub const ALL: [MatrixFamily; 3] = [
        MatrixFamily::SelfCombination,
        MatrixFamily::Weighted,
        MatrixFamily::Score,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MatrixFamily::SelfCombination => "self_combination",
            MatrixFamily::Weighted => "weighted",
            MatrixFamily::Score => "score",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSvd {
    pub sample: usize,
    pub singular_values: Vec<f64>,
    /// Leading left singular vector.
    pub u1: Vec<f64>,
    /// Leading right singular vector.
    pub v1: Vec<f64>,
    pub diagonal: Vec<f64>,
    pub reconstruction_error: f64,
    /// Set when the decomposition failed for this sample.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdReport {
    pub pair: (usize, usize),
    pub families: Vec<(MatrixFamily, Vec<SampleSvd>)>,
}

impl SvdReport {
    pub fn family(&self, f: MatrixFamily) -> &[SampleSvd] {
        self.families
            .iter()
            .find(|(g, _)| *g == f)
            .map_or(&[], |(_, s)| s.as_slice())
    }
}

fn analyze(sample: usize, a: &Tensor) -> SampleSvd {
    let diagonal = (0..a.rows().min(a.cols())).map(|i| a.at(i, i)).collect();
    match svd(a) {
        Ok(d) => SampleSvd {
            sample,
            u1: d.left(0),
            v1: d.right(0),
            reconstruction_error: d.reconstruct().max_abs_diff(a),
            singular_values: d.s,
            diagonal,
            error: None,
        },
        Err(e) => SampleSvd {
            sample,
            singular_values: Vec::new(),
            u1: Vec::new(),
            v1: Vec::new(),
            diagonal,
            reconstruction_error: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

fn column(y: &Tensor, j: usize) -> Vec<f64> {
    (0..y.rows()).map(|i| y.at(i, j)).collect()
}

/// Decomposes, for every input window `Y`, the self-combination of phase
/// columns `pair = (i, j)`, its weighted form and the layer's score matrix.
pub fn svd_analyze(
    inputs: &[Tensor],
    layer: &SelfAttention,
    store: &ParamStore,
    pair: (usize, usize),
) -> Result<SvdReport> {
    let d = layer.config().d;
    if pair.0 >= d || pair.1 >= d {
        return Err(invalid(format!("column pair {pair:?} out of range for width {d}")));
    }
    let weight = store.get(layer.w_k).matmul(&store.get(layer.w_q).transpose()?)?;
    let mut families: Vec<(MatrixFamily, Vec<SampleSvd>)> = MatrixFamily::ALL
        .iter()
        .map(|f| (*f, Vec::with_capacity(inputs.len())))
        .collect();
    for (t, y) in inputs.iter().enumerate() {
        let (yi, yj) = (column(y, pair.0), column(y, pair.1));
        let n = yi.len();
        let combination = Tensor::from_fn(&[n, n], |k| yi[k / n] * yj[k % n]);
        let weighted = if weight.rows() == n {
            weight.matmul(&combination)?
        } else {
            return Err(invalid("query/key width must equal the window length"));
        };
        let score = {
            let mut tape = Tape::with_params(store);
            let x = tape.constant(y.clone())?;
            let (_, scores) = layer.forward_with_scores(&mut tape, x)?;
            tape.value(scores[0]).clone()
        };
        families[0].1.push(analyze(t, &combination));
        families[1].1.push(analyze(t, &weighted));
        families[2].1.push(analyze(t, &score));
    }
    Ok(SvdReport { pair, families })
}
