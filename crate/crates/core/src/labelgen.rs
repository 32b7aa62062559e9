//! Offline contact labels from foot height: zero-phase low-pass, extrema,
//! then minima between consecutive peaks are joined into stance intervals.

use std::f64::consts::PI;

use thiserror::Error;

use crate::dataio::{ContactState, SensorFrame};

/// Samples marked before a lone minimum.
pub const SINGLE_MIN_BACKOFF: usize = 30;
/// Shortest signal accepted by [`lowpass`].
pub const MIN_FILTER_LEN: usize = 16;
const FILTER_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("signal of length {len} is shorter than the required {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("leg signals have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("half-power frequency {0} outside (0, 0.5)")]
    BadFrequency(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelGait {
    Trot,
    Pronk,
    Gallop,
}

impl LabelGait {
    /// Normalized half-power frequency in cycles per sample.
    pub fn half_power_freq(self) -> f64 {
        match self {
            LabelGait::Trot => 0.04,
            LabelGait::Pronk | LabelGait::Gallop => 0.08,
        }
    }
}

impl std::str::FromStr for LabelGait {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trot" => Ok(LabelGait::Trot),
            "pronk" => Ok(LabelGait::Pronk),
            "gallop" => Ok(LabelGait::Gallop),
            _ => Err(format!("unknown gait {s:?} (expected trot, pronk or gallop)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelGenConfig {
    pub half_power_freq: f64,
    pub backoff: usize,
}

impl LabelGenConfig {
    pub fn for_gait(gait: LabelGait) -> Self {
        Self { half_power_freq: gait.half_power_freq(), backoff: SINGLE_MIN_BACKOFF }
    }
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        Self::for_gait(LabelGait::Trot)
    }
}

/// Second-order section `[b0, b1, b2, a1, a2]` with `a0 = 1`.
pub type Biquad = [f64; 5];

/// Digital Butterworth low-pass as cascaded biquads, via the bilinear
/// transform with frequency prewarping. `cutoff` is in cycles per sample.
pub fn butterworth_sections(order: usize, cutoff: f64) -> Vec<Biquad> {
    assert!(order % 2 == 0 && order > 0);
    let wc = 2.0 * (PI * cutoff).tan();
    (0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let re = wc * theta.cos();
            let mag2 = wc * wc;
            let a0 = 4.0 - 4.0 * re + mag2;
            let a1 = 2.0 * mag2 - 8.0;
            let a2 = 4.0 + 4.0 * re + mag2;
            let g = mag2 / a0;
            [g, 2.0 * g, g, a1 / a0, a2 / a0]
        })
        .collect()
}

fn section_steady_state(s: &Biquad) -> [f64; 2] {
    let [b0, b1, b2, a1, a2] = *s;
    let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
    let z2 = b2 - a2 * gain;
    let z1 = b1 - a1 * gain + z2;
    [z1, z2]
}

/// Direct-form-II-transposed cascade started in steady state for a step of
/// height `x[0]`.
fn cascade_filter(sections: &[Biquad], x: &mut [f64]) {
    let mut level = x[0];
    for s in sections {
        let zi = section_steady_state(s);
        let mut z1 = zi[0] * level;
        let mut z2 = zi[1] * level;
        let [b0, b1, b2, a1, a2] = *s;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
        level *= (b0 + b1 + b2) / (1.0 + a1 + a2);
    }
}

/// Zero-phase fourth-order Butterworth low-pass (forward-backward) with odd
/// reflection padding at both ends.
pub fn lowpass(signal: &[f64], half_power_freq: f64) -> Result<Vec<f64>, LabelError> {
    let n = signal.len();
    if n < MIN_FILTER_LEN {
        return Err(LabelError::SignalTooShort { len: n, min: MIN_FILTER_LEN });
    }
    if !(half_power_freq > 0.0 && half_power_freq < 0.5) {
        return Err(LabelError::BadFrequency(half_power_freq));
    }
    // The cascade applied twice puts exactly half amplitude at the cutoff.
    let sections = butterworth_sections(FILTER_ORDER, half_power_freq);
    let pad = ((6.0 / half_power_freq).ceil() as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));
    cascade_filter(&sections, &mut ext);
    ext.reverse();
    cascade_filter(&sections, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Strict interior extrema; a plateau counts once at its first index.
pub fn local_extrema(signal: &[f64]) -> Result<(Vec<usize>, Vec<usize>), LabelError> {
    if signal.len() < 3 {
        return Err(LabelError::SignalTooShort { len: signal.len(), min: 3 });
    }
    // runs of equal values: (first index, value)
    let mut runs: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in signal.iter().enumerate() {
        if runs.last().map_or(true, |r| r.1 != v) {
            runs.push((i, v));
        }
    }
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for k in 1..runs.len().saturating_sub(1) {
        let (l, (i, v), r) = (runs[k - 1].1, runs[k], runs[k + 1].1);
        if v > l && v > r {
            maxima.push(i);
        } else if v < l && v < r {
            minima.push(i);
        }
    }
    Ok((minima, maxima))
}

/// Labels one leg from already-filtered foot height.
pub fn label_filtered(filtered: &[f64], backoff: usize) -> Result<Vec<bool>, LabelError> {
    let (min_idx, max_idx) = local_extrema(filtered)?;
    let mut contacts = vec![false; filtered.len()];
    let (mut i, mut j) = (0usize, 0usize);
    let mut contact_end = 0usize;
    while i < min_idx.len() && j < max_idx.len() {
        let mut contact_start = min_idx[i];
        let next_peak = max_idx[j];
        let mut count = 0;
        while i < min_idx.len() && min_idx[i] < next_peak {
            contact_end = min_idx[i];
            i += 1;
            count += 1;
        }
        if count == 1 {
            contact_start = contact_end.saturating_sub(backoff).max(1);
        }
        if contact_start < contact_end {
            contacts[contact_start..contact_end].iter_mut().for_each(|c| *c = true);
        }
        j += 1;
    }
    Ok(contacts)
}

/// Labels for one leg's raw foot height.
pub fn label_leg(foot_height: &[f64], config: &LabelGenConfig) -> Result<Vec<bool>, LabelError> {
    let filtered = lowpass(foot_height, config.half_power_freq)?;
    label_filtered(&filtered, config.backoff)
}

/// Per-frame contact states from per-leg foot heights.
pub fn generate_labels(foot_heights: &[Vec<f64>], config: &LabelGenConfig) -> Result<Vec<ContactState>, LabelError> {
    let n = foot_heights.first().map_or(0, |h| h.len());
    if let Some(bad) = foot_heights.iter().find(|h| h.len() != n) {
        return Err(LabelError::LengthMismatch(n, bad.len()));
    }
    let per_leg = foot_heights.iter().map(|h| label_leg(h, config)).collect::<Result<Vec<_>, _>>()?;
    Ok((0..n).map(|t| ContactState::new(per_leg.iter().map(|leg| leg[t]).collect())).collect())
}

/// Writes generated labels into `gt_contact` of every frame.
pub fn label_frames(frames: &mut [SensorFrame], n_legs: usize, config: &LabelGenConfig) -> Result<(), LabelError> {
    let heights: Vec<Vec<f64>> = (0..n_legs).map(|l| frames.iter().map(|f| f.foot_height(l)).collect()).collect();
    let labels = generate_labels(&heights, config)?;
    for (f, c) in frames.iter_mut().zip(labels) {
        f.gt_contact = Some(c);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Amplitude of the component at `freq` cycles/sample over `x`, by direct
    /// projection onto a sine/cosine pair.
    fn amplitude_at(x: &[f64], freq: f64) -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * k as f64;
            c += v * ph.cos();
            s += v * ph.sin();
        }
        2.0 * (c * c + s * s).sqrt() / x.len() as f64
    }

    fn sine(n: usize, freq: f64) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * freq * k as f64).sin()).collect()
    }

    #[test]
    fn dc_gain_is_one() {
        let x = vec![-0.3; 200];
        let y = lowpass(&x, 0.04).unwrap();
        assert_eq!(y.len(), 200);
        assert!(y.iter().all(|v| (v + 0.3).abs() < 1e-9));
        for s in butterworth_sections(4, 0.08) {
            assert!(((s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn half_amplitude_at_cutoff() {
        for fc in [0.04, 0.08] {
            // an integer number of periods in the measured span
            let periods: f64 = 40.0;
            let n = (periods / fc).round() as usize;
            let x = sine(3 * n, fc);
            let y = lowpass(&x, fc).unwrap();
            let ratio = amplitude_at(&y[n..2 * n], fc) / amplitude_at(&x[n..2 * n], fc);
            assert!((0.49..=0.51).contains(&ratio), "fc {fc}: {ratio}");
            let fast = 5.0 * fc;
            let n5 = (periods / fast).round() as usize;
            let x = sine(3 * n5, fast);
            let y = lowpass(&x, fc).unwrap();
            assert!(amplitude_at(&y[n5..2 * n5], fast) < 0.05);
        }
    }

    #[test]
    fn rejects_short_or_bad_input() {
        assert!(matches!(lowpass(&[0.0; 15], 0.04), Err(LabelError::SignalTooShort { .. })));
        assert!(matches!(lowpass(&[0.0; 20], 0.5), Err(LabelError::BadFrequency(_))));
        assert!(local_extrema(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn extrema_cases() {
        assert_eq!(local_extrema(&[0.0, 1.0, 0.0]).unwrap(), (vec![], vec![1]));
        let mono: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(local_extrema(&mono).unwrap(), (vec![], vec![]));
        assert_eq!(local_extrema(&[2.0, 1.0, 1.0, 1.0, 3.0, 3.0, 0.0]).unwrap(), (vec![1], vec![4]));
        // a step at the boundary is not an extremum
        assert_eq!(local_extrema(&[1.0, 1.0, 2.0, 2.0]).unwrap(), (vec![], vec![]));

        let x: Vec<f64> = (0..300).map(|k| (2.0 * PI * k as f64 / 100.0).sin()).collect();
        let (mins, maxs) = local_extrema(&x).unwrap();
        assert_eq!(maxs.len(), 3);
        assert_eq!(mins.len(), 3);
        for (p, m) in maxs.iter().enumerate() {
            assert!((*m as i64 - (25 + 100 * p) as i64).abs() <= 1);
        }
        for (p, m) in mins.iter().enumerate() {
            assert!((*m as i64 - (75 + 100 * p) as i64).abs() <= 1);
        }
    }

    #[test]
    fn constant_height_gives_no_contact() {
        let labels = generate_labels(&[vec![-0.3; 500], vec![-0.25; 500]], &LabelGenConfig::default()).unwrap();
        assert_eq!(labels.len(), 500);
        assert!(labels.iter().all(|c| c.legs == vec![false, false]));
        assert!(matches!(
            generate_labels(&[vec![0.0; 50], vec![0.0; 40]], &LabelGenConfig::default()),
            Err(LabelError::LengthMismatch(50, 40))
        ));
    }

    #[test]
    fn hand_traced_intervals() {
        // minima at 40 and 140, maxima at 10, 90 and 190
        let mut x = vec![0.0; 220];
        for (k, v) in x.iter_mut().enumerate() {
            *v = if k < 10 { -0.5 + 0.05 * k as f64 } else { -(2.0 * PI * (k as f64 - 40.0) / 100.0).cos() };
        }
        let (mins, maxs) = local_extrema(&x).unwrap();
        assert_eq!(mins, vec![40, 140]);
        assert_eq!(maxs, vec![10, 90, 190]);
        let c = label_filtered(&x, 30).unwrap();
        let marked: Vec<usize> = (0..x.len()).filter(|&k| c[k]).collect();
        let expect: Vec<usize> = (10..40).chain(110..140).collect();
        assert_eq!(marked, expect);

        // backoff clamps at index 1
        let c = label_filtered(&x[30..], 30).unwrap();
        assert!(!c[0]);
        assert!(c[1..10].iter().all(|b| *b));
        assert!(!c[10]);
    }

    #[test]
    fn lone_minimum_after_last_peak_marks_nothing() {
        let x: Vec<f64> = (0..120).map(|k| (2.0 * PI * k as f64 / 100.0).sin()).collect();
        // max at 25, min at 75, no later peak
        let c = label_filtered(&x, 30).unwrap();
        assert!(c.iter().all(|b| !*b));
    }

    proptest! {
        #[test]
        fn offset_invariance(offset in -1.0f64..1.0, phase in 0.0f64..1.0) {
            let h: Vec<f64> = (0..600)
                .map(|k| {
                    let p = (k as f64 / 250.0 + phase).fract();
                    if p < 0.5 { -0.3 } else { -0.3 + 0.08 * (1.0 - (4.0 * PI * (p - 0.5)).cos()) / 2.0 }
                })
                .collect();
            let shifted: Vec<f64> = h.iter().map(|v| v + offset).collect();
            let cfg = LabelGenConfig::default();
            let a = label_leg(&h, &cfg).unwrap();
            let b = label_leg(&shifted, &cfg).unwrap();
            let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert!(diff <= 2, "{} differing frames", diff);
            prop_assert_eq!(a.len(), h.len());
        }
    }
}
