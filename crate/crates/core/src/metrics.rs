//! Objective metrics: pitch class entropy, scale consistency and groove
//! consistency, plus corpus aggregation as mean and 95% confidence interval.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::score::{bars_of, Score, RESOLUTION};

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const HARMONIC_MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 11];
/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

pub const PITCH_CLASS_ENTROPY: &str = "pitch_class_entropy";
pub const SCALE_CONSISTENCY: &str = "scale_consistency";
pub const GROOVE_CONSISTENCY: &str = "groove_consistency";

fn pitch_class_histogram(score: &Score) -> Result<([u64; 12], u64), MetricError> {
    let mut hist = [0u64; 12];
    for n in score.notes.iter().filter(|n| !n.is_drum()) {
        hist[(n.pitch % 12) as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(MetricError::Undefined("no_pitched_notes"));
    }
    Ok((hist, total))
}

/// Base-2 Shannon entropy of the per-note pitch-class histogram (drums excluded).
pub fn pitch_class_entropy(score: &Score) -> Result<f64, MetricError> {
    let (hist, total) = pitch_class_histogram(score)?;
    let total = total as f64;
    let entropy = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // -0.0 for a single class
    Ok(entropy.max(0.0))
}

/// Pitch-class bitmasks of the 12 major and 12 harmonic minor scales.
pub fn scale_masks() -> [u16; 24] {
    let mut masks = [0u16; 24];
    for root in 0..12u8 {
        for (i, steps) in [MAJOR_STEPS, HARMONIC_MINOR_STEPS].iter().enumerate() {
            masks[i * 12 + root as usize] = steps.iter().fold(0u16, |m, s| m | 1 << ((root + s) % 12));
        }
    }
    masks
}

/// Largest fraction of pitched notes falling inside a single scale.
pub fn scale_consistency(score: &Score) -> Result<f64, MetricError> {
    let (hist, total) = pitch_class_histogram(score)?;
    let best = scale_masks()
        .iter()
        .map(|mask| (0..12).filter(|pc| mask & (1 << pc) != 0).map(|pc| hist[pc]).sum::<u64>())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / total as f64)
}

/// One minus the mean normalized Hamming distance between the binary onset
/// grids of consecutive bars. Bars shorter than the longest are zero-padded.
pub fn groove_consistency(score: &Score) -> Result<f64, MetricError> {
    let bars = bars_of(score);
    if bars.len() < 2 {
        return Err(MetricError::Undefined("fewer_than_two_bars"));
    }
    let slots = bars.iter().map(|(_, len)| (*len * RESOLUTION) as usize).max().unwrap_or(0);
    let mut grids = vec![vec![false; slots]; bars.len()];
    let starts: Vec<u64> = bars.iter().map(|(s, _)| *s as u64 * RESOLUTION as u64).collect();
    for note in &score.notes {
        let onset = note.onset();
        let bar = starts.partition_point(|&s| s <= onset) - 1;
        grids[bar][(onset - starts[bar]) as usize] = true;
    }
    let total: usize = grids
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| a != b).count())
        .sum();
    Ok(1.0 - total as f64 / ((bars.len() - 1) as f64 * slots as f64))
}

/// Metric values for one score; `None` where a metric is undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pitch_class_entropy: Option<f64>,
    pub scale_consistency: Option<f64>,
    pub groove_consistency: Option<f64>,
}

impl MetricReport {
    pub fn of(score: &Score) -> MetricReport {
        MetricReport {
            pitch_class_entropy: pitch_class_entropy(score).ok(),
            scale_consistency: scale_consistency(score).ok(),
            groove_consistency: groove_consistency(score).ok(),
        }
    }

    fn values(&self) -> [(&'static str, Option<f64>); 3] {
        [
            (PITCH_CLASS_ENTROPY, self.pitch_class_entropy),
            (SCALE_CONSISTENCY, self.scale_consistency),
            (GROOVE_CONSISTENCY, self.groove_consistency),
        ]
    }
}

/// Mean and 95% confidence half-width of one metric over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
    pub n_undefined: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.ci95)
    }
}

/// Mean and `1.96 * s / sqrt(n)` over defined values, with the sample
/// standard deviation `s` (n - 1 denominator).
pub fn summarize(values: &[f64], n_undefined: usize, metric: &'static str) -> Result<Summary, MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::InsufficientData(metric));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Summary { mean, ci95: Z_95 * var.sqrt() / (n as f64).sqrt(), n, n_undefined })
}

/// Aggregates per-score reports, metric by metric. A metric with fewer than
/// two defined values yields `InsufficientData` in its slot.
pub fn aggregate(reports: &[MetricReport]) -> BTreeMap<&'static str, Result<Summary, MetricError>> {
    let mut columns: BTreeMap<&'static str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in reports {
        for (name, value) in r.values() {
            let col = columns.entry(name).or_default();
            match value {
                Some(v) => col.0.push(v),
                None => col.1 += 1,
            }
        }
    }
    for name in [PITCH_CLASS_ENTROPY, SCALE_CONSISTENCY, GROOVE_CONSISTENCY] {
        columns.entry(name).or_default();
    }
    columns
        .into_iter()
        .map(|(name, (values, undefined))| (name, summarize(&values, undefined, name)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Note, TimeSignature};

    fn pitches(ps: &[u8]) -> Score {
        Score::new(ps.iter().enumerate().map(|(i, &p)| Note::new(i as u32, 0, p, 1, 0).unwrap()).collect())
    }

    #[test]
    fn entropy_anchors() {
        assert_eq!(pitch_class_entropy(&pitches(&[60, 60, 72])).unwrap(), 0.0);
        let uniform: Vec<u8> = (60..72).collect();
        assert!((pitch_class_entropy(&pitches(&uniform)).unwrap() - 12f64.log2()).abs() < 1e-12);
        let mixed = pitch_class_entropy(&pitches(&[60, 60, 60, 62])).unwrap();
        assert!((mixed - 0.811_278_124_459_132_8).abs() < 1e-12);
    }

    #[test]
    fn drums_only_is_undefined() {
        let s = Score::new(vec![Note::drum(0, 0, 36).unwrap()]);
        assert_eq!(pitch_class_entropy(&s), Err(MetricError::Undefined("no_pitched_notes")));
        assert_eq!(scale_consistency(&s), Err(MetricError::Undefined("no_pitched_notes")));
    }

    #[test]
    fn scale_anchors() {
        assert_eq!(scale_consistency(&pitches(&[60, 62, 64, 65, 67, 69, 71])).unwrap(), 1.0);
        let uniform: Vec<u8> = (60..72).collect();
        assert!((scale_consistency(&pitches(&uniform)).unwrap() - 7.0 / 12.0).abs() < 1e-12);
        // C# major contains both C (as B#) and C#
        assert_eq!(scale_consistency(&pitches(&[60, 61])).unwrap(), 1.0);
    }

    #[test]
    fn scale_masks_have_seven_classes() {
        let masks = scale_masks();
        assert!(masks.iter().all(|m| m.count_ones() == 7));
        let distinct: std::collections::BTreeSet<_> = masks.iter().collect();
        assert_eq!(distinct.len(), 24);
    }

    #[test]
    fn groove_identical_bars() {
        let s = Score::new(vec![Note::new(0, 0, 60, 1, 0).unwrap(), Note::new(4, 0, 60, 1, 0).unwrap()]);
        assert_eq!(groove_consistency(&s).unwrap(), 1.0);
    }

    #[test]
    fn groove_two_bars_hamming_two() {
        // bar A onset at slot 0, bar B onset at slot 24 (beat 2)
        let s = Score::new(vec![Note::new(0, 0, 60, 1, 0).unwrap(), Note::new(6, 0, 60, 1, 0).unwrap()]);
        assert!((groove_consistency(&s).unwrap() - (1.0 - 2.0 / 48.0)).abs() < 1e-12);
    }

    #[test]
    fn groove_alternating_bars() {
        let s = Score::new(vec![
            Note::new(0, 0, 60, 1, 0).unwrap(),
            Note::new(6, 0, 60, 1, 0).unwrap(),
            Note::new(8, 0, 60, 1, 0).unwrap(),
            Note::new(14, 0, 60, 1, 0).unwrap(),
        ]);
        assert!((groove_consistency(&s).unwrap() - (1.0 - (2.0 + 2.0 + 2.0) / 3.0 / 48.0)).abs() < 1e-12);
    }

    #[test]
    fn groove_needs_two_bars() {
        let s = Score::new(vec![Note::new(3, 0, 60, 1, 0).unwrap()]);
        assert_eq!(groove_consistency(&s), Err(MetricError::Undefined("fewer_than_two_bars")));
    }

    #[test]
    fn groove_pads_shorter_bars() {
        let mut s = Score::new(vec![Note::new(0, 0, 60, 1, 0).unwrap(), Note::new(4, 0, 60, 1, 0).unwrap()]);
        s.time_signatures = vec![TimeSignature::new(4, 2, 4).unwrap()];
        // bars (0,4) and (4,2): both onsets at slot 0, Q = 48
        assert_eq!(groove_consistency(&s).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let s = summarize(&[0.9, 0.9], 0, "x").unwrap();
        assert_eq!((s.mean, s.ci95), (0.9, 0.0));
        let s = summarize(&[0.0, 1.0], 0, "x").unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.ci95 - 1.96 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert!((s.ci95 - 0.98).abs() < 1e-12);
        assert_eq!(summarize(&[1.0], 0, "x"), Err(MetricError::InsufficientData("x")));
    }

    #[test]
    fn aggregate_counts_undefined() {
        let reports = [
            MetricReport { pitch_class_entropy: Some(1.0), scale_consistency: Some(1.0), groove_consistency: None },
            MetricReport { pitch_class_entropy: Some(2.0), scale_consistency: Some(0.5), groove_consistency: None },
        ];
        let agg = aggregate(&reports);
        let pce = agg[PITCH_CLASS_ENTROPY].as_ref().unwrap();
        assert_eq!((pce.mean, pce.n, pce.n_undefined), (1.5, 2, 0));
        assert_eq!(agg[GROOVE_CONSISTENCY], Err(MetricError::InsufficientData(GROOVE_CONSISTENCY)));
        assert_eq!(format!("{pce}"), "1.50 ± 0.98");
    }
}
