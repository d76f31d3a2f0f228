//! BEV feature maps and detection-anchored tokens.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, pow, sin};

use crate::detect::Detection;
use crate::geometry::{Cell, Subcell};
use crate::{Error, Result};

/// Feature channels expected by the reference affinity network.
pub const DEFAULT_CHANNELS: usize = 128;

/// Base of the geometric frequency ladder of the positional code.
pub const POSITIONAL_BASE: f64 = 10_000.0;

/// Dense `channels × rows × cols` feature map for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub frame_index: i64,
}

impl BevFeature {
    pub fn new(
        channels: usize,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        frame_index: i64,
    ) -> Result<Self> {
        let expected = channels * rows * cols;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "bev feature data",
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("bev feature entries must be finite"));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
            frame_index,
        })
    }

    pub fn zeros(channels: usize, rows: usize, cols: usize, frame_index: i64) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
            frame_index,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    /// Copies the channel vector at a cell.
    pub fn feature_at(&self, cell: Cell) -> Result<Vec<f64>> {
        self.check_cell(cell)?;
        Ok((0..self.channels)
            .map(|c| self.get(c, cell.row, cell.col))
            .collect())
    }

    /// Overwrites the channel vector at a cell.
    pub fn set_feature(&mut self, cell: Cell, feature: &[f64]) -> Result<()> {
        self.check_cell(cell)?;
        if feature.len() != self.channels {
            return Err(Error::ChannelMismatch {
                left: self.channels,
                right: feature.len(),
            });
        }
        let plane = self.rows * self.cols;
        let base = cell.row * self.cols + cell.col;
        for (c, v) in feature.iter().enumerate() {
            self.data[c * plane + base] = *v;
        }
        Ok(())
    }

    fn check_cell(&self, cell: Cell) -> Result<()> {
        if cell.row >= self.rows || cell.col >= self.cols {
            return Err(Error::CellOutOfRange {
                row: cell.row,
                col: cell.col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// Adds the 3D sinusoidal code for `(row, col, frame)` to `feature`.
///
/// Channels form three equal groups (row, column, frame). Inside a group of
/// size `g`, pair `i` holds `sin(p·ω_i)` and `cos(p·ω_i)` with
/// `ω_i = 10000^(-2i/g)`.
pub fn add_positional_code(feature: &mut [f64], row: f64, col: f64, frame: f64) -> Result<()> {
    let channels = feature.len();
    if !channels.is_multiple_of(6) {
        return Err(Error::ChannelsNotDivisible(channels));
    }
    let group = channels / 3;
    for (g, pos) in [row, col, frame].into_iter().enumerate() {
        let slot = &mut feature[g * group..(g + 1) * group];
        for i in 0..group / 2 {
            let omega = 1.0 / pow(POSITIONAL_BASE, (2 * i) as f64 / group as f64);
            slot[2 * i] += sin(pos * omega);
            slot[2 * i + 1] += cos(pos * omega);
        }
    }
    Ok(())
}

/// The positional code alone.
pub fn positional_code(channels: usize, row: f64, col: f64, frame: f64) -> Result<Vec<f64>> {
    let mut code = vec![0.0; channels];
    add_positional_code(&mut code, row, col, frame)?;
    Ok(code)
}

/// Returns `bev` plus the positional code of every cell at its frame index.
pub fn positional_encode(bev: &BevFeature) -> Result<BevFeature> {
    if !bev.channels.is_multiple_of(6) {
        return Err(Error::ChannelsNotDivisible(bev.channels));
    }
    let mut out = bev.clone();
    let plane = bev.rows * bev.cols;
    let mut code = vec![0.0; bev.channels];
    for r in 0..bev.rows {
        for c in 0..bev.cols {
            code.iter_mut().for_each(|v| *v = 0.0);
            add_positional_code(&mut code, r as f64, c as f64, bev.frame_index as f64)?;
            let base = r * bev.cols + c;
            for (ch, v) in code.iter().enumerate() {
                out.data[ch * plane + base] += v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub feature: Vec<f64>,
    pub cell: Cell,
    pub subcell: Subcell,
    pub frame_index: i64,
    /// Ordinal of the source detection within its frame.
    pub detection_id: usize,
}

/// Tokens of one frame, in detection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenSet {
    pub frame_index: i64,
    pub tokens: Vec<Token>,
}

impl TokenSet {
    pub fn new(frame_index: i64, tokens: Vec<Token>) -> Self {
        Self {
            frame_index,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Channel count, `None` for an empty set.
    pub fn channels(&self) -> Option<usize> {
        self.tokens.first().map(|t| t.feature.len())
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.tokens.iter().map(|t| t.feature.as_slice())
    }
}

/// One token per detection holding the BEV feature at the detection cell.
pub fn extract_tokens(bev: &BevFeature, detections: &[Detection]) -> Result<TokenSet> {
    let tokens = detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            Ok(Token {
                feature: bev.feature_at(d.cell)?,
                cell: d.cell,
                subcell: d.subcell,
                frame_index: bev.frame_index,
                detection_id: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenSet::new(bev.frame_index, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(row: usize, col: usize) -> Detection {
        Detection {
            cell: Cell::new(row, col),
            subcell: Subcell::default(),
            score: 0.9,
            frame_index: 0,
        }
    }

    fn ramp(channels: usize, rows: usize, cols: usize, frame: i64) -> BevFeature {
        let data = (0..channels * rows * cols).map(|i| (i % 7) as f64 * 0.25).collect();
        BevFeature::new(channels, rows, cols, data, frame).unwrap()
    }

    #[test]
    fn code_at_origin_is_sin_zero_cos_one() {
        let code = positional_code(12, 0.0, 0.0, 0.0).unwrap();
        for (i, v) in code.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn encoding_is_additive() {
        let a = ramp(12, 3, 4, 2);
        let b = BevFeature::zeros(12, 3, 4, 2);
        let ea = positional_encode(&a).unwrap();
        let eb = positional_encode(&b).unwrap();
        for i in 0..a.data().len() {
            let da = ea.data()[i] - a.data()[i];
            assert!((da - eb.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_changes_only_temporal_group() {
        let c0 = positional_code(18, 4.0, 7.0, 0.0).unwrap();
        let c1 = positional_code(18, 4.0, 7.0, 1.0).unwrap();
        assert_eq!(c0[..12], c1[..12]);
        // First temporal pair: sin(1), cos(1) against sin(0), cos(0).
        assert_eq!((c0[12], c0[13]), (0.0, 1.0));
        assert!((c1[12] - libm::sin(1.0)).abs() < 1e-15);
        assert!((c1[13] - libm::cos(1.0)).abs() < 1e-15);
        // Pair i = 1 of a 6-channel group uses ω = 10000^(-1/3).
        let w = 1.0 / libm::pow(10_000.0, 2.0 / 6.0);
        assert!((c1[14] - libm::sin(w)).abs() < 1e-15);
        assert!((c1[17] - libm::cos(libm::pow(10_000.0, -4.0 / 6.0))).abs() < 1e-15);
    }

    #[test]
    fn rejects_indivisible_channels() {
        assert_eq!(
            positional_encode(&BevFeature::zeros(128, 1, 1, 0)),
            Err(Error::ChannelsNotDivisible(128))
        );
        assert!(positional_code(10, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn distinct_cells_get_distinct_codes() {
        let mut codes = Vec::new();
        for r in 0..6 {
            for c in 0..6 {
                for t in 0..3 {
                    codes.push(positional_code(24, r as f64, c as f64, t as f64).unwrap());
                }
            }
        }
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let diff = codes[i]
                    .iter()
                    .zip(&codes[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff > 1e-6, "codes {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn extract_reads_cell_feature() {
        let (ch, rows, cols) = (4, 8, 3);
        let mut data = vec![0.0; ch * rows * cols];
        for c in 0..ch {
            for r in 0..rows {
                for k in 0..cols {
                    data[(c * rows + r) * cols + k] = r as f64;
                }
            }
        }
        let bev = BevFeature::new(ch, rows, cols, data, 3).unwrap();
        let set = extract_tokens(&bev, &[det(5, 2), det(1, 0)]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.tokens[0].feature, vec![5.0; 4]);
        assert_eq!(set.tokens[1].feature, vec![1.0; 4]);
        assert_eq!(set.tokens[1].detection_id, 1);
        assert_eq!(set.frame_index, 3);
        assert!(extract_tokens(&bev, &[]).unwrap().is_empty());
    }

    #[test]
    fn extract_rejects_out_of_range() {
        let bev = BevFeature::zeros(2, 2, 2, 0);
        assert!(matches!(
            extract_tokens(&bev, &[det(2, 0)]),
            Err(Error::CellOutOfRange { row: 2, .. })
        ));
    }

    #[test]
    fn encoded_tokens_differ_by_the_code() {
        let bev = ramp(12, 5, 5, 4);
        let enc = positional_encode(&bev).unwrap();
        let dets = [det(3, 1), det(0, 4)];
        let raw = extract_tokens(&bev, &dets).unwrap();
        let coded = extract_tokens(&enc, &dets).unwrap();
        for (r, c) in raw.tokens.iter().zip(&coded.tokens) {
            let code =
                positional_code(12, r.cell.row as f64, r.cell.col as f64, 4.0).unwrap();
            for k in 0..12 {
                assert!((c.feature[k] - r.feature[k] - code[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tokens_do_not_alias_the_map() {
        let bev = ramp(6, 2, 2, 0);
        let mut set = extract_tokens(&bev, &[det(1, 1)]).unwrap();
        set.tokens[0].feature[0] = 99.0;
        assert_ne!(bev.get(0, 1, 1), 99.0);
    }
}
