use std::f64::consts::{LN_10, PI, SQRT_2};

use ndarray::{Array2, ArrayView2};

use crate::domain::{AudioConfig, FeatureSequence, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::recognizer::extract_mel;

/// `(10 / ln 10) * sqrt(2)`, the dB scale applied to the mean cepstral distance.
pub const MCD_SCALE: f64 = 10.0 / LN_10 * SQRT_2;

/// Mel-cepstra `c_1..c_order` of a waveform at the working frame rate.
pub fn mel_cepstra(wave: &Waveform, audio: &AudioConfig, order: usize) -> Result<FeatureSequence> {
    mel_cepstra_from_mel(&extract_mel(wave, audio)?, order)
}

/// Orthonormal DCT-II of each log-mel frame; `c_0` is dropped.
pub fn mel_cepstra_from_mel(mel: &MelSpectrogram, order: usize) -> Result<FeatureSequence> {
    let bins = mel.frames().ncols();
    if order == 0 || order >= bins {
        return Err(Error::InvalidInput(format!("cepstral order must be in 1..{bins}, got {order}")));
    }
    let scale = (2.0 / bins as f64).sqrt();
    let basis = Array2::from_shape_fn((bins, order), |(n, k)| {
        scale * (PI * (k + 1) as f64 * (2 * n + 1) as f64 / (2 * bins) as f64).cos()
    });
    let cep = mel.frames().mapv(|v| v as f64).dot(&basis);
    FeatureSequence::new(cep.mapv(|v| v as f32), mel.frame_shift_ms(), "cepstra")
}

/// Optimal alignment under squared Euclidean frame cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

fn sq_dist(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum()
}

/// DTW with steps (1,0), (0,1), (1,1). On equal accumulated cost the
/// diagonal predecessor wins, then the one advancing only `a`.
pub fn dtw_align(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<DtwPath> {
    let (ta, tb) = (a.nrows(), b.nrows());
    if ta == 0 || tb == 0 {
        return Err(Error::EmptyInput("sequence for alignment"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimMismatch { expected: a.ncols(), found: b.ncols() });
    }
    let mut acc = Array2::from_elem((ta, tb), f64::INFINITY);
    for i in 0..ta {
        for j in 0..tb {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = best + sq_dist(a, b, i, j);
        }
    }
    let (mut i, mut j) = (ta - 1, tb - 1);
    let mut pairs = vec![(i, j)];
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
        let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
        let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            (i, j) = (i - 1, j - 1);
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(DtwPath { pairs, cost: acc[[ta - 1, tb - 1]] })
}

/// MCD in dB between two cepstral sequences (`T x order`, power term
/// already excluded), averaged over the DTW path.
pub fn mcd_frames(reference: ArrayView2<'_, f64>, converted: ArrayView2<'_, f64>) -> Result<f64> {
    let path = dtw_align(reference, converted)?;
    let total: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| sq_dist(reference, converted, i, j).sqrt())
        .sum();
    Ok(MCD_SCALE * total / path.pairs.len() as f64)
}

pub fn mcd(reference: &FeatureSequence, converted: &FeatureSequence) -> Result<f64> {
    let r = reference.frames().mapv(|v| v as f64);
    let c = converted.frames().mapv(|v| v as f64);
    mcd_frames(r.view(), c.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn brute_min(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
        let here = sq_dist(a.view(), b.view(), i, j);
        if (i, j) == (0, 0) {
            return here;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(brute_min(a, b, i - 1, j));
        }
        if j > 0 {
            best = best.min(brute_min(a, b, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(brute_min(a, b, i - 1, j - 1));
        }
        here + best
    }

    #[test]
    fn dtw_examples() {
        let a = array![[0.0], [1.0], [2.0]];
        let p = dtw_align(a.view(), a.view()).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(p.cost, 0.0);
        let p = dtw_align(array![[0.0]].view(), array![[0.0], [0.0]].view()).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (0, 1)]);
        assert!(matches!(dtw_align(a.view(), array![[0.0, 1.0]].view()), Err(Error::DimMismatch { .. })));
        // all-equal frames: the tie-break keeps to the diagonal, then advances `a`
        let z3 = Array2::<f64>::zeros((3, 1));
        let z2 = Array2::<f64>::zeros((2, 1));
        assert_eq!(dtw_align(z3.view(), z2.view()).unwrap().pairs, vec![(0, 0), (1, 0), (2, 1)]);
    }

    proptest! {
        #[test]
        fn dtw_matches_exhaustive_minimum(
            ta in 1usize..=6, tb in 1usize..=6,
            vals in prop::collection::vec(-3.0f64..3.0, 24),
        ) {
            let a = Array2::from_shape_fn((ta, 2), |(i, k)| vals[i * 2 + k]);
            let b = Array2::from_shape_fn((tb, 2), |(i, k)| vals[12 + i * 2 + k]);
            let p = dtw_align(a.view(), b.view()).unwrap();
            let brute = brute_min(&a, &b, ta - 1, tb - 1);
            prop_assert!((p.cost - brute).abs() < 1e-9);
            let along: f64 = p.pairs.iter().map(|&(i, j)| sq_dist(a.view(), b.view(), i, j)).sum();
            prop_assert!((along - p.cost).abs() < 1e-9);
            prop_assert_eq!(p.pairs[0], (0, 0));
            prop_assert_eq!(*p.pairs.last().unwrap(), (ta - 1, tb - 1));
            for w in p.pairs.windows(2) {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                prop_assert!(matches!((di, dj), (1, 0) | (0, 1) | (1, 1)));
            }
        }

        #[test]
        fn mcd_zero_on_self_and_symmetric(vals in prop::collection::vec(-2.0f64..2.0, 40), vals2 in prop::collection::vec(-2.0f64..2.0, 40)) {
            let a = Array2::from_shape_vec((5, 8), vals).unwrap();
            let b = Array2::from_shape_vec((5, 8), vals2).unwrap();
            prop_assert_eq!(mcd_frames(a.view(), a.view()).unwrap(), 0.0);
            let ab = mcd_frames(a.view(), b.view()).unwrap();
            let ba = mcd_frames(b.view(), a.view()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
        }
    }

    #[test]
    fn mcd_closed_form() {
        let a = Array2::<f64>::zeros((10, 24));
        let mut b = a.clone();
        b.column_mut(5).fill(1.0);
        assert!((mcd_frames(a.view(), b.view()).unwrap() - MCD_SCALE).abs() < 1e-12);
        assert!((MCD_SCALE - 6.141_851_463).abs() < 1e-8);
    }

    #[test]
    fn silence_cepstra_are_zero() {
        let audio = AudioConfig::default();
        let wave = Waveform::new(vec![0.0; 4800], 24000).unwrap();
        let c = mel_cepstra(&wave, &audio, 24).unwrap();
        assert_eq!((c.dim(), c.frame_shift_ms()), (24, 10.0));
        assert!(c.frames().iter().all(|v| v.abs() < 1e-4));
        let short = Waveform::new(vec![0.0; 100], 24000).unwrap();
        assert!(matches!(mel_cepstra(&short, &audio, 24), Err(Error::TooShort { .. })));
    }

    #[test]
    fn dct_is_orthonormal() {
        let bins = 80;
        let x: Vec<f32> = (0..bins).map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.3).collect();
        let mel = MelSpectrogram::new(Array2::from_shape_vec((1, bins), x.clone()).unwrap(), 10.0).unwrap();
        let c = mel_cepstra_from_mel(&mel, bins - 1).unwrap();
        let mean = x.iter().map(|v| *v as f64).sum::<f64>() / bins as f64;
        let energy: f64 = x.iter().map(|v| (*v as f64 - mean).powi(2)).sum();
        let ceps: f64 = c.frames().iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((energy - ceps).abs() < 1e-3, "{energy} vs {ceps}");
    }
}
