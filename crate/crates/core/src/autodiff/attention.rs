use alloc::format;

use super::matrix::{softmax_rows, Mat};
use crate::math;
use crate::{Error, Result};

/// Query/key/value projections of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `d x dk`
    pub wq: Mat,
    /// `d x dk`
    pub wk: Mat,
    /// `d x dv`
    pub wv: Mat,
}

impl AttentionWeights {
    pub fn new(wq: Mat, wk: Mat, wv: Mat) -> Result<Self> {
        let d = wq.rows;
        if wq.cols == 0 || wk.rows != d || wv.rows != d || wk.cols != wq.cols {
            return Err(Error::Shape(format!(
                "attention projections disagree: Wq {}x{}, Wk {}x{}, Wv {}x{}",
                wq.rows, wq.cols, wk.rows, wk.cols, wv.rows, wv.cols
            )));
        }
        if [&wq, &wk, &wv]
            .iter()
            .any(|m| m.data.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("attention weights"));
        }
        Ok(Self { wq, wk, wv })
    }

    pub fn model_dim(&self) -> usize {
        self.wq.rows
    }

    pub fn key_dim(&self) -> usize {
        self.wq.cols
    }

    pub fn value_dim(&self) -> usize {
        self.wv.cols
    }

    /// `1 / sqrt(dk)`
    pub fn scale(&self) -> f64 {
        1.0 / math::sqrt(self.key_dim() as f64)
    }
}

struct Projections {
    q: Mat,
    k: Mat,
    v: Mat,
    a: Mat,
}

fn project(x: &Mat, w: &AttentionWeights) -> Result<Projections> {
    if x.cols != w.model_dim() {
        return Err(Error::Shape(format!(
            "tokens have dimension {}, weights expect {}",
            x.cols,
            w.model_dim()
        )));
    }
    let q = x.matmul(&w.wq)?;
    let k = x.matmul(&w.wk)?;
    let v = x.matmul(&w.wv)?;
    let s = q.matmul(&k.transpose())?.scaled(w.scale());
    let a = softmax_rows(&s);
    Ok(Projections { q, k, v, a })
}

/// Returns the attention matrix `A` (rows sum to one) and the output `A V`.
pub fn attention_forward(x: &Mat, w: &AttentionWeights) -> Result<(Mat, Mat)> {
    let p = project(x, w)?;
    let out = p.a.matmul(&p.v)?;
    Ok((p.a, out))
}

/// Gradient of a downstream scalar with respect to the attention input,
/// written out in closed form from the upstream gradient `d_out` (n x dv):
///
/// `A^T dO Wv^T + (dS K Wq^T + dS^T Q Wk^T) / sqrt(dk)`
///
/// where `dA = dO V^T` and `dS = A ⊙ (dA - (dA ⊙ A) 1 1^T)`.
pub fn attention_backward_closed_form(x: &Mat, w: &AttentionWeights, d_out: &Mat) -> Result<Mat> {
    let p = project(x, w)?;
    if d_out.rows != x.rows || d_out.cols != w.value_dim() {
        return Err(Error::Shape(format!(
            "upstream gradient must be {}x{}, got {}x{}",
            x.rows,
            w.value_dim(),
            d_out.rows,
            d_out.cols
        )));
    }
    let n = x.rows;
    let d_a = d_out.matmul(&p.v.transpose())?;
    let weighted = d_a.hadamard(&p.a);
    let mut centered = d_a.clone();
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| weighted.at(i, j)).sum();
        for j in 0..n {
            *centered.at_mut(i, j) -= row_sum;
        }
    }
    let d_s = p.a.hadamard(&centered);

    let through_v = p
        .a
        .transpose()
        .matmul(d_out)?
        .matmul(&w.wv.transpose())?;
    let through_q = d_s.matmul(&p.k)?.matmul(&w.wq.transpose())?;
    let through_k = d_s.transpose().matmul(&p.q)?.matmul(&w.wk.transpose())?;
    Ok(through_v.add(&through_q.add(&through_k).scaled(w.scale())))
}
