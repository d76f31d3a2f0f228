//! Cross-attention association between the tokens of two frames.
//!
//! Queries (current frame, `N_t` rows) and keys (previous frame, `N_p` rows)
//! are paired channel-wise, scored by a stack of three 1x1 convolutions, and
//! the resulting `N_t × N_p` affinity is extended with a constant row and
//! column for entries and exits. A column softmax over the row-extended matrix
//! and a row softmax over the column-extended matrix are multiplied
//! element-wise to produce the combined affinity, which then mixes the value
//! tokens into the queries.

use alloc::vec;
use alloc::vec::Vec;

use libm::exp;

use crate::matrix::Matrix;
use crate::tokens::TokenSet;
use crate::{Error, Result};

/// Layer widths of the affinity network for 128-channel tokens.
pub const LAYER_DIMS: [(usize, usize); 3] = [(128, 64), (64, 32), (32, 1)];

/// `M[i][j][c] = Q[i][c] · K[j][c]`, stored `i`-major then `j` then `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTensor {
    queries: usize,
    keys: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PairTensor {
    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Channel vector of the `(i, j)` pair.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.keys + j) * self.channels;
        &self.data[base..base + self.channels]
    }
}

fn channels_of(q: &Matrix, k: &Matrix) -> Result<usize> {
    match (q.rows(), k.rows()) {
        (0, 0) => Ok(q.cols().max(k.cols())),
        (0, _) => Ok(k.cols()),
        (_, 0) => Ok(q.cols()),
        _ if q.cols() == k.cols() => Ok(q.cols()),
        _ => Err(Error::ChannelMismatch {
            left: q.cols(),
            right: k.cols(),
        }),
    }
}

/// Element-wise products of every query/key pair.
pub fn pair_tensor(q: &Matrix, k: &Matrix) -> Result<PairTensor> {
    let channels = channels_of(q, k)?;
    let mut data = Vec::with_capacity(q.rows() * k.rows() * channels);
    for i in 0..q.rows() {
        let qi = q.row(i);
        for j in 0..k.rows() {
            data.extend(qi.iter().zip(k.row(j)).map(|(a, b)| a * b));
        }
    }
    Ok(PairTensor {
        queries: q.rows(),
        keys: k.rows(),
        channels,
        data,
    })
}

/// One 1x1 convolution followed by an inference-mode normalization
/// (`y · scale + shift`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        scale: Vec<f64>,
        shift: Vec<f64>,
    ) -> Result<Self> {
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("layer weight", in_dim * out_dim, weight.len())?;
        check("layer bias", out_dim, bias.len())?;
        check("layer scale", out_dim, scale.len())?;
        check("layer shift", out_dim, shift.len())?;
        if scale.contains(&0.0) {
            return Err(Error::InvalidConfig("normalization scale entries must be nonzero"));
        }
        let params = weight.iter().chain(&bias).chain(&scale).chain(&shift);
        if params.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            scale,
            shift,
        })
    }

    /// Layer averaging disjoint groups of `in_dim / out_dim` inputs, with
    /// identity normalization.
    fn averaging(in_dim: usize, out_dim: usize) -> Self {
        let group = in_dim / out_dim;
        let mut weight = vec![0.0; in_dim * out_dim];
        for o in 0..out_dim {
            for g in 0..group {
                weight[o * in_dim + o * group + g] = 1.0 / group as f64;
            }
        }
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
            scale: vec![1.0; out_dim],
            shift: vec![0.0; out_dim],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>, rectify: bool) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            let y = acc * self.scale[o] + self.shift[o];
            out.push(if rectify { y.max(0.0) } else { y });
        }
    }
}

/// Weights of the three-layer pairwise affinity network.
///
/// Layers 1 and 2 are rectified; the scalar output layer is not, so
/// affinities may be negative before the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroCnnWeights {
    layers: [ConvLayer; 3],
}

impl MicroCnnWeights {
    pub fn new(layers: [ConvLayer; 3]) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    what: "consecutive layer widths",
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if layers[2].out_dim != 1 {
            return Err(Error::DimensionMismatch {
                what: "output layer width",
                expected: 1,
                got: layers[2].out_dim,
            });
        }
        Ok(Self { layers })
    }

    /// The reference kernel: a stack whose composition is the channel mean of
    /// its input for nonnegative inputs (`channels → channels/2 → channels/4
    /// → 1`). Scores `dot(q, k) / channels` for nonnegative pairs.
    pub fn reference(channels: usize) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::InvalidConfig(
                "reference kernel needs a positive channel count divisible by 4",
            ));
        }
        let (half, quarter) = (channels / 2, channels / 4);
        Self::new([
            ConvLayer::averaging(channels, half),
            ConvLayer::averaging(half, quarter),
            ConvLayer::averaging(quarter, 1),
        ])
    }

    /// A kernel scoring `gain · dot(q, k)` for pairs of any sign.
    ///
    /// Layer 1 emits the positive and negative parts of sums over blocks of
    /// four channels, layer 2 merges pairs of blocks the same way, and the
    /// output layer takes the difference, so the rectifications lose nothing.
    /// Needs `channels` divisible by 8.
    pub fn signed_dot(channels: usize, gain: f64) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(8) {
            return Err(Error::InvalidConfig(
                "signed dot kernel needs a positive channel count divisible by 8",
            ));
        }
        if gain == 0.0 || !gain.is_finite() {
            return Err(Error::InvalidConfig("kernel gain must be finite and nonzero"));
        }
        let split = |in_dim: usize, out_dim: usize, sign_of: &dyn Fn(usize, usize) -> f64| {
            let weight = (0..out_dim * in_dim)
                .map(|k| sign_of(k / in_dim, k % in_dim))
                .collect();
            ConvLayer::new(
                in_dim,
                out_dim,
                weight,
                vec![0.0; out_dim],
                vec![1.0; out_dim],
                vec![0.0; out_dim],
            )
        };
        let sign = |o: usize| if o.is_multiple_of(2) { 1.0 } else { -1.0 };
        let (half, quarter) = (channels / 2, channels / 4);
        // Output 2b and 2b+1 read the block of four inputs starting at 4b.
        let l1 = split(channels, half, &|o, i| if i / 4 == o / 2 { sign(o) } else { 0.0 })?;
        // Output 2j and 2j+1 read the four layer-1 units starting at 4j.
        let l2 = split(half, quarter, &|o, i| {
            if i / 4 == o / 2 {
                sign(o) * sign(i)
            } else {
                0.0
            }
        })?;
        let mut l3 = split(quarter, 1, &|_, i| sign(i))?;
        l3.scale[0] = gain;
        Self::new([l1, l2, l3])
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn layers(&self) -> &[ConvLayer; 3] {
        &self.layers
    }

    /// Scores one pair vector.
    pub fn score(&self, pair: &[f64]) -> f64 {
        let mut a = Vec::with_capacity(self.layers[0].out_dim);
        let mut b = Vec::with_capacity(self.layers[1].out_dim);
        self.layers[0].forward(pair, &mut a, true);
        self.layers[1].forward(&a, &mut b, true);
        self.layers[2].forward(&b, &mut a, false);
        a[0]
    }
}

/// Raw affinity `A[i][j]` for every pair.
pub fn micro_cnn(m: &PairTensor, w: &MicroCnnWeights) -> Result<Matrix> {
    if m.queries * m.keys > 0 && m.channels != w.input_channels() {
        return Err(Error::DimensionMismatch {
            what: "pair tensor channels",
            expected: w.input_channels(),
            got: m.channels,
        });
    }
    Ok(Matrix::from_fn(m.queries, m.keys, |i, j| w.score(m.pair(i, j))))
}

/// Appends a constant row (`A₁`, entries) and a constant column (`A₂`, exits).
pub fn extend(a: &Matrix, gamma: f64) -> (Matrix, Matrix) {
    let (n, m) = (a.rows(), a.cols());
    let a1 = Matrix::from_fn(n + 1, m, |i, j| if i < n { a[(i, j)] } else { gamma });
    let a2 = Matrix::from_fn(n, m + 1, |i, j| if j < m { a[(i, j)] } else { gamma });
    (a1, a2)
}

/// Sum taken in ascending order so the result does not depend on the order
/// of the tokens.
fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sorted: Vec<f64> = values.collect();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if max == f64::NEG_INFINITY {
        return;
    }
    for v in values.iter_mut() {
        *v = exp(*v - max);
    }
    let sum = ordered_sum(values.iter().copied());
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Softmax down each column.
pub fn softmax_columns(a: &Matrix) -> Matrix {
    softmax_rows(&a.transpose()).transpose()
}

/// Softmax along each row.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Combined affinity with entry/exit extension.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    /// `N_t × N_p` combined affinity, entries in `[0, 1]`.
    pub inner: Matrix,
    /// Entry scores, one per previous-frame token.
    pub extra_row: Vec<f64>,
    /// Exit scores, one per current-frame token.
    pub extra_col: Vec<f64>,
    pub corner: f64,
}

impl AffinityMatrix {
    /// Affinity with a constant inner block and matching extension.
    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            inner: Matrix::filled(rows, cols, value),
            extra_row: vec![value; cols],
            extra_col: vec![value; rows],
            corner: value,
        }
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn cols(&self) -> usize {
        self.inner.cols()
    }

    /// The full `(N_t + 1) × (N_p + 1)` matrix.
    pub fn extended(&self) -> Matrix {
        let (n, m) = (self.rows(), self.cols());
        Matrix::from_fn(n + 1, m + 1, |i, j| match (i < n, j < m) {
            (true, true) => self.inner[(i, j)],
            (false, true) => self.extra_row[j],
            (true, false) => self.extra_col[i],
            (false, false) => self.corner,
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        0.0
    } else {
        ordered_sum(values.iter().copied()) / values.len() as f64
    }
}

/// Dual-softmax combination of the two extended matrices.
///
/// The entry row is scaled by the mean of the matching inner column, the exit
/// column by the mean of the matching inner row, and the corner is the mean
/// of the inner block (zero for empty blocks).
pub fn dual_softmax_combine(a1: &Matrix, a2: &Matrix) -> Result<AffinityMatrix> {
    let n = a2.rows();
    let m = a1.cols();
    if a1.rows() != n + 1 || a2.cols() != m + 1 {
        return Err(Error::ShapeMismatch {
            left_rows: a1.rows(),
            left_cols: a1.cols(),
            right_rows: a2.rows(),
            right_cols: a2.cols(),
        });
    }
    let s1 = softmax_columns(a1);
    let s2 = softmax_rows(a2);
    let inner = Matrix::from_fn(n, m, |i, j| s1[(i, j)] * s2[(i, j)]);
    let extra_row = (0..m)
        .map(|j| s1[(n, j)] * mean(inner.column(j)))
        .collect();
    let extra_col = (0..n)
        .map(|i| s2[(i, m)] * mean(inner.row(i).iter().copied()))
        .collect();
    let corner = mean(inner.as_slice().iter().copied());
    Ok(AffinityMatrix {
        inner,
        extra_row,
        extra_col,
        corner,
    })
}

/// Attended values `V̂ = inner · V`.
pub fn propagate(aff: &AffinityMatrix, v: &Matrix) -> Result<Matrix> {
    if aff.cols() != v.rows() {
        return Err(Error::DimensionMismatch {
            what: "value rows",
            expected: aff.cols(),
            got: v.rows(),
        });
    }
    if v.rows() == 0 {
        return Ok(Matrix::zeros(aff.rows(), v.cols()));
    }
    aff.inner.matmul(v)
}

/// Adds attended values to the raw query tokens.
pub fn refine_tokens(raw: &TokenSet, attended: &Matrix) -> Result<TokenSet> {
    if raw.len() != attended.rows() {
        return Err(Error::CountMismatch {
            tokens: raw.len(),
            rows: attended.rows(),
        });
    }
    let mut out = raw.clone();
    for (i, tok) in out.tokens.iter_mut().enumerate() {
        let add = attended.row(i);
        if add.is_empty() {
            continue;
        }
        if add.len() != tok.feature.len() {
            return Err(Error::ChannelMismatch {
                left: tok.feature.len(),
                right: add.len(),
            });
        }
        tok.feature.iter_mut().zip(add).for_each(|(f, a)| *f += a);
    }
    Ok(out)
}

/// Output of one cross-attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// Raw network scores `A` before extension.
    pub logits: Matrix,
    pub affinity: AffinityMatrix,
    /// `V̂`, one row per query.
    pub attended: Matrix,
}

/// Network weights plus the entry/exit constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub weights: MicroCnnWeights,
    pub gamma: f64,
}

impl CrossAttention {
    pub fn new(weights: MicroCnnWeights, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::InvalidConfig("gamma must be finite"));
        }
        Ok(Self { weights, gamma })
    }

    /// Reference kernel with `gamma = 0`.
    pub fn reference(channels: usize) -> Result<Self> {
        Self::new(MicroCnnWeights::reference(channels)?, 0.0)
    }

    pub fn channels(&self) -> usize {
        self.weights.input_channels()
    }

    /// Runs the module for `queries` (current frame) against `keys` and
    /// `values` (previous frame).
    pub fn attend(&self, queries: &Matrix, keys: &Matrix, values: &Matrix) -> Result<Attention> {
        if keys.rows() != values.rows() {
            return Err(Error::DimensionMismatch {
                what: "value rows",
                expected: keys.rows(),
                got: values.rows(),
            });
        }
        let pairs = pair_tensor(queries, keys)?;
        let logits = micro_cnn(&pairs, &self.weights)?;
        let (a1, a2) = extend(&logits, self.gamma);
        let affinity = dual_softmax_combine(&a1, &a2)?;
        let attended = if values.rows() == 0 {
            Matrix::zeros(queries.rows(), self.channels())
        } else {
            propagate(&affinity, values)?
        };
        Ok(Attention {
            logits,
            affinity,
            attended,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cell, Subcell};
    use crate::tokens::Token;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pair_tensor_small() {
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = m(&[&[1.0, 1.0], &[2.0, 0.0], &[0.0, 3.0]]);
        let t = pair_tensor(&q, &k).unwrap();
        assert_eq!((t.queries(), t.keys(), t.channels()), (2, 3, 2));
        assert_eq!([t.pair(0, 0), t.pair(0, 1), t.pair(0, 2)], [[1.0, 0.0], [2.0, 0.0], [0.0, 0.0]]);
        assert_eq!([t.pair(1, 0), t.pair(1, 1), t.pair(1, 2)], [[0.0, 1.0], [0.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn pair_tensor_ones_query_copies_keys() {
        let q = m(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let k = m(&[&[0.5, -2.0, 3.0]]);
        let t = pair_tensor(&q, &k).unwrap();
        assert_eq!(t.pair(0, 0), k.row(0));
        assert_eq!(t.pair(1, 0), k.row(0));
    }

    #[test]
    fn pair_tensor_channel_mismatch() {
        let err = pair_tensor(&Matrix::zeros(1, 3), &Matrix::zeros(2, 4)).unwrap_err();
        assert_eq!(err, Error::ChannelMismatch { left: 3, right: 4 });
    }

    #[test]
    fn reference_kernel_dims() {
        let w = MicroCnnWeights::reference(128).unwrap();
        let dims: Vec<_> = w.layers().iter().map(|l| (l.in_dim, l.out_dim)).collect();
        assert_eq!(dims, LAYER_DIMS);
        assert!(MicroCnnWeights::reference(126).is_err());
    }

    #[test]
    fn signed_dot_handles_negative_pairs() {
        let w = MicroCnnWeights::signed_dot(16, 3.0).unwrap();
        let dims: Vec<_> = w.layers().iter().map(|l| (l.in_dim, l.out_dim)).collect();
        assert_eq!(dims, [(16, 8), (8, 4), (4, 1)]);
        let q: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 4.0).collect();
        let k: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { -1.0 } else { 0.5 }).collect();
        let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
        let t = pair_tensor(&Matrix::from_rows(&[&q]).unwrap(), &Matrix::from_rows(&[&k]).unwrap()).unwrap();
        assert!((micro_cnn(&t, &w).unwrap()[(0, 0)] - 3.0 * dot).abs() < 1e-12);
        assert!(MicroCnnWeights::signed_dot(12, 1.0).is_err());
        assert!(MicroCnnWeights::signed_dot(16, 0.0).is_err());
    }

    #[test]
    fn zero_pairs_score_zero() {
        let w = MicroCnnWeights::reference(8).unwrap();
        let t = pair_tensor(&Matrix::zeros(2, 8), &Matrix::zeros(3, 8)).unwrap();
        assert_eq!(micro_cnn(&t, &w).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn micro_cnn_rejects_wrong_width() {
        let w = MicroCnnWeights::reference(8).unwrap();
        let t = pair_tensor(&Matrix::zeros(1, 4), &Matrix::zeros(1, 4)).unwrap();
        assert!(matches!(micro_cnn(&t, &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn output_layer_is_not_rectified() {
        let mut layers = MicroCnnWeights::reference(4).unwrap().layers().clone();
        layers[2].shift = vec![-3.0];
        let w = MicroCnnWeights::new(layers).unwrap();
        assert_eq!(w.score(&[0.0; 4]), -3.0);
    }

    #[test]
    fn hidden_layers_are_rectified() {
        let w = MicroCnnWeights::reference(4).unwrap();
        // Pair averages: (-2 + 0)/2 = -1 -> 0, (1 + 1)/2 = 1.
        assert_eq!(w.score(&[-2.0, 0.0, 1.0, 1.0]), 0.5);
    }

    #[test]
    fn layer_validation() {
        assert!(ConvLayer::new(2, 1, vec![1.0; 2], vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(ConvLayer::new(2, 1, vec![1.0; 3], vec![0.0], vec![1.0], vec![0.0]).is_err());
        let l = |i, o| {
            ConvLayer::new(i, o, vec![1.0; i * o], vec![0.0; o], vec![1.0; o], vec![0.0; o]).unwrap()
        };
        assert!(MicroCnnWeights::new([l(4, 2), l(3, 1), l(1, 1)]).is_err());
        assert!(MicroCnnWeights::new([l(4, 2), l(2, 2), l(2, 2)]).is_err());
        assert!(MicroCnnWeights::new([l(4, 2), l(2, 2), l(2, 1)]).is_ok());
    }

    #[test]
    fn extend_appends_gamma() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let (a1, a2) = extend(&a, 0.5);
        assert_eq!((a1.rows(), a1.cols()), (3, 3));
        assert_eq!(a1.row(2), [0.5, 0.5, 0.5]);
        assert_eq!((a2.rows(), a2.cols()), (2, 4));
        assert_eq!(a2.column(3).collect::<Vec<_>>(), [0.5, 0.5]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(a1[(i, j)], a[(i, j)]);
                assert_eq!(a2[(i, j)], a[(i, j)]);
            }
        }
        let (e1, e2) = extend(&Matrix::zeros(0, 0), 7.0);
        assert_eq!((e1.rows(), e1.cols(), e2.rows(), e2.cols()), (1, 0, 0, 1));
    }

    #[test]
    fn uniform_column_softmax() {
        let s = softmax_columns(&Matrix::zeros(3, 1));
        for i in 0..3 {
            assert!((s[(i, 0)] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_dual_softmax() {
        let (a1, a2) = extend(&m(&[&[10.0]]), 0.0);
        let aff = dual_softmax_combine(&a1, &a2).unwrap();
        let sigma = 1.0 / (1.0 + libm::exp(-10.0));
        assert!((aff.inner[(0, 0)] - sigma * sigma).abs() < 1e-15);
        assert!((aff.inner[(0, 0)] - 0.999_909_2).abs() < 1e-7);
        // Entry/exit slots get (1 - σ) times the inner mean.
        assert!((aff.extra_row[0] - (1.0 - sigma) * sigma * sigma).abs() < 1e-15);
        assert!((aff.extra_col[0] - aff.extra_row[0]).abs() < 1e-15);
        assert_eq!(aff.corner, aff.inner[(0, 0)]);
    }

    #[test]
    fn combine_rejects_bad_shapes() {
        let err = dual_softmax_combine(&Matrix::zeros(3, 2), &Matrix::zeros(2, 2));
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn empty_combination() {
        let (a1, a2) = extend(&Matrix::zeros(0, 3), 0.0);
        let aff = dual_softmax_combine(&a1, &a2).unwrap();
        assert_eq!((aff.rows(), aff.cols()), (0, 3));
        assert_eq!(aff.extra_row, [0.0; 3]);
        assert_eq!(aff.corner, 0.0);
        assert_eq!(aff.extended().rows(), 1);
    }

    #[test]
    fn propagate_identity_and_zero() {
        let v = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut aff = AffinityMatrix::constant(2, 2, 0.0);
        assert_eq!(propagate(&aff, &v).unwrap(), Matrix::zeros(2, 2));
        aff.inner = Matrix::identity(2);
        assert_eq!(propagate(&aff, &v).unwrap(), v);
        assert!(propagate(&aff, &Matrix::zeros(3, 2)).is_err());
    }

    fn tokens(features: &[&[f64]]) -> TokenSet {
        let tokens = features
            .iter()
            .enumerate()
            .map(|(i, f)| Token {
                feature: f.to_vec(),
                cell: Cell::new(i, i),
                subcell: Subcell::default(),
                frame_index: 5,
                detection_id: i,
            })
            .collect();
        TokenSet::new(5, tokens)
    }

    #[test]
    fn refine_adds_attended_rows() {
        let raw = tokens(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(refine_tokens(&raw, &Matrix::zeros(2, 2)).unwrap(), raw);
        let v = m(&[&[0.5, 0.5], &[-1.0, 1.0]]);
        let mut aff = AffinityMatrix::constant(2, 2, 0.0);
        aff.inner = Matrix::identity(2);
        let refined = refine_tokens(&raw, &propagate(&aff, &v).unwrap()).unwrap();
        assert_eq!(refined.tokens[0].feature, [1.5, 2.5]);
        assert_eq!(refined.tokens[1].feature, [2.0, 5.0]);
        assert_eq!(refined.tokens[1].cell, raw.tokens[1].cell);
        let zero = tokens(&[&[0.0, 0.0]]);
        assert_eq!(refine_tokens(&zero, &m(&[&[0.5, -0.5]])).unwrap().tokens[0].feature, [0.5, -0.5]);
        assert_eq!(
            refine_tokens(&raw, &Matrix::zeros(1, 2)),
            Err(Error::CountMismatch { tokens: 2, rows: 1 })
        );
    }

    #[test]
    fn attend_with_no_previous_tokens() {
        let ca = CrossAttention::reference(4).unwrap();
        let q = Matrix::filled(2, 4, 1.0);
        let out = ca.attend(&q, &Matrix::zeros(0, 4), &Matrix::zeros(0, 4)).unwrap();
        assert_eq!((out.affinity.rows(), out.affinity.cols()), (2, 0));
        assert_eq!(out.attended, Matrix::zeros(2, 4));
        // Row softmax over the lone exit column gives 1 times an empty mean.
        assert_eq!(out.affinity.extra_col, [0.0, 0.0]);
    }
}
