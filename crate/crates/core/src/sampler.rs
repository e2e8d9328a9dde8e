//! Change sampling: decide which screenshots are worth classifying.
//!
//! Frames are considered at most once per `interval_ms` tick. A considered
//! frame is forwarded when its RGB histogram differs enough from the
//! reference histogram, i.e. when the similarity drops below the threshold.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::scalar::Scalar;

pub const DEFAULT_INTERVAL_MS: u64 = 100;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.8;
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplerError {
    #[error("bin count {0} must be a power of two between 1 and 256")]
    InvalidBinCount(usize),
    #[error("histograms have {0} and {1} bins per channel")]
    BinCountMismatch(usize, usize),
    #[error("frame {frame_id} at {timestamp_ms} ms arrived after frame {last_frame_id} at {last_timestamp_ms} ms")]
    OutOfOrderFrame {
        frame_id: u64,
        timestamp_ms: u64,
        last_frame_id: u64,
        last_timestamp_ms: u64,
    },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Per-channel normalized color histogram, stored channel-major (R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbHistogram<T> {
    bins: usize,
    values: Vec<T>,
}

impl<T: Scalar> RgbHistogram<T> {
    pub fn bins_per_channel(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.values[c * self.bins..(c + 1) * self.bins]
    }
}

fn check_bins(bins: usize) -> Result<u32, SamplerError> {
    if bins == 0 || bins > 256 || !bins.is_power_of_two() {
        return Err(SamplerError::InvalidBinCount(bins));
    }
    Ok(8 - bins.trailing_zeros())
}

/// Histogram of a frame with `bins` equal-width bins per channel; bin `k`
/// covers values `[k·256/bins, (k+1)·256/bins)`.
pub fn compute_histogram<T: Scalar>(
    frame: &Frame,
    bins: usize,
) -> Result<RgbHistogram<T>, SamplerError> {
    let shift = check_bins(bins)?;
    // four lanes so runs of equal values don't serialize on one counter
    let mut lanes = [[[0u32; 256]; 3]; 4];
    let pixels = frame.pixels();
    let mut quads = pixels.chunks_exact(12);
    for q in &mut quads {
        for (k, lane) in lanes.iter_mut().enumerate() {
            lane[0][q[3 * k] as usize] += 1;
            lane[1][q[3 * k + 1] as usize] += 1;
            lane[2][q[3 * k + 2] as usize] += 1;
        }
    }
    for px in quads.remainder().chunks_exact(3) {
        for c in 0..3 {
            lanes[0][c][px[c] as usize] += 1;
        }
    }
    let total = pixels.len() / 3;
    let mut values = Vec::with_capacity(3 * bins);
    for c in 0..3 {
        let mut binned = vec![0usize; bins];
        for v in 0..256 {
            binned[v >> shift] += lanes.iter().map(|l| l[c][v] as usize).sum::<usize>();
        }
        values.extend(binned.into_iter().map(|n| T::ratio(n, total)));
    }
    Ok(RgbHistogram { bins, values })
}

fn check_same_bins<T>(a: &RgbHistogram<T>, b: &RgbHistogram<T>) -> Result<(), SamplerError> {
    if a.bins != b.bins {
        return Err(SamplerError::BinCountMismatch(a.bins, b.bins));
    }
    Ok(())
}

/// Histogram intersection averaged over the three channels. 1 for identical
/// histograms, 0 for disjoint support.
pub fn similarity<T: Scalar>(a: &RgbHistogram<T>, b: &RgbHistogram<T>) -> Result<T, SamplerError> {
    check_same_bins(a, b)?;
    let sum = a
        .values
        .iter()
        .zip(&b.values)
        .fold(T::zero(), |acc, (&x, &y)| acc + x.min_of(y));
    Ok((sum / T::from_count(3)).clamp_between(T::zero(), T::one()))
}

/// Pearson correlation per channel, averaged and clipped to `[0, 1]`.
pub fn correlation<T: Scalar + Float>(
    a: &RgbHistogram<T>,
    b: &RgbHistogram<T>,
) -> Result<T, SamplerError> {
    check_same_bins(a, b)?;
    let mut total = T::zero();
    for c in 0..3 {
        let (x, y) = (a.channel(c), b.channel(c));
        let n = T::from_count(x.len());
        let mx = x.iter().fold(T::zero(), |s, &v| s + v) / n;
        let my = y.iter().fold(T::zero(), |s, &v| s + v) / n;
        let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
        for (&u, &v) in x.iter().zip(y) {
            sxy = sxy + (u - mx) * (v - my);
            sxx = sxx + (u - mx) * (u - mx);
            syy = syy + (v - my) * (v - my);
        }
        let denom = (sxx * syy).sqrt();
        total = total
            + if denom > T::zero() {
                sxy / denom
            } else if x == y {
                T::one()
            } else {
                T::zero()
            };
    }
    Ok((total / T::from_count(3)).clamp_between(T::zero(), T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    #[default]
    Intersection,
    Correlation,
}

/// Which histogram a considered frame is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// The last forwarded frame. Slow cross-fades accumulate until forwarded.
    #[default]
    LastForwarded,
    /// The previous considered frame.
    Consecutive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub interval_ms: u64,
    pub similarity_threshold: f64,
    pub bins_per_channel: usize,
    pub metric: SimilarityMetric,
    pub reference: ReferenceMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            interval_ms: DEFAULT_INTERVAL_MS,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            bins_per_channel: DEFAULT_BINS,
            metric: SimilarityMetric::Intersection,
            reference: ReferenceMode::LastForwarded,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.interval_ms == 0 {
            return Err(SamplerError::InvalidConfig("interval_ms must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(SamplerError::InvalidConfig(format!(
                "similarity_threshold {} outside [0, 1]",
                self.similarity_threshold
            )));
        }
        check_bins(self.bins_per_channel)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleDecision<T> {
    /// The frame fell between ticks; no histogram was computed.
    BetweenTicks,
    /// Considered, but too similar to the reference.
    Similar { similarity: T },
    /// Considered and forwarded. `similarity` is `None` when there was no
    /// reference to compare against.
    Forward { similarity: Option<T> },
}

impl<T> SampleDecision<T> {
    pub fn is_forward(&self) -> bool {
        matches!(self, Self::Forward { .. })
    }

    pub fn is_considered(&self) -> bool {
        !matches!(self, Self::BetweenTicks)
    }
}

/// Per-session sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState<T> {
    reference: Option<RgbHistogram<T>>,
    next_tick_ms: u64,
    last_seen: Option<(u64, u64)>,
}

impl<T> Default for SamplerState<T> {
    fn default() -> Self {
        Self {
            reference: None,
            next_tick_ms: 0,
            last_seen: None,
        }
    }
}

impl<T: Scalar + Float> SamplerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_tick_ms(&self) -> u64 {
        self.next_tick_ms
    }

    pub fn reference(&self) -> Option<&RgbHistogram<T>> {
        self.reference.as_ref()
    }

    /// Forget the reference so the next considered frame is forwarded
    /// unconditionally.
    pub fn reset_reference(&mut self) {
        self.reference = None;
    }

    pub fn step(
        &mut self,
        frame: &Frame,
        config: &SamplerConfig,
    ) -> Result<SampleDecision<T>, SamplerError> {
        let (id, ts) = (frame.frame_id(), frame.timestamp_ms());
        if let Some((last_id, last_ts)) = self.last_seen {
            if id <= last_id || ts < last_ts {
                return Err(SamplerError::OutOfOrderFrame {
                    frame_id: id,
                    timestamp_ms: ts,
                    last_frame_id: last_id,
                    last_timestamp_ms: last_ts,
                });
            }
        }
        self.last_seen = Some((id, ts));
        if ts < self.next_tick_ms {
            return Ok(SampleDecision::BetweenTicks);
        }
        let interval = config.interval_ms.max(1);
        self.next_tick_ms = (ts / interval + 1) * interval;

        let hist = compute_histogram::<T>(frame, config.bins_per_channel)?;
        let score = match &self.reference {
            None => None,
            Some(r) => Some(match config.metric {
                SimilarityMetric::Intersection => similarity(r, &hist)?,
                SimilarityMetric::Correlation => correlation(r, &hist)?,
            }),
        };
        let forward = match score {
            None => true,
            Some(s) => s < T::from_real(config.similarity_threshold),
        };
        if forward || config.reference == ReferenceMode::Consecutive {
            self.reference = Some(hist);
        }
        Ok(if forward {
            SampleDecision::Forward { similarity: score }
        } else {
            SampleDecision::Similar {
                similarity: score.expect("no reference means forward"),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RgbImage;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn solid(rgb: [u8; 3], id: u64, ts: u64) -> Frame {
        Frame::new("s", id, ts, RgbImage::solid(10, 10, rgb).unwrap())
    }

    fn half_black_white() -> Frame {
        let img = RgbImage::from_fn(10, 10, |x, _| if x < 5 { [0; 3] } else { [255; 3] }).unwrap();
        Frame::new("s", 0, 0, img)
    }

    #[test]
    fn histogram_of_solid_frames() {
        let h: RgbHistogram<f64> = compute_histogram(&solid([0, 0, 0], 0, 0), 64).unwrap();
        for c in 0..3 {
            assert_eq!(h.channel(c)[0], 1.0);
            assert!(h.channel(c)[1..].iter().all(|&v| v == 0.0));
        }
        let h: RgbHistogram<f64> = compute_histogram(&solid([255; 3], 0, 0), 64).unwrap();
        for c in 0..3 {
            assert_eq!(h.channel(c)[63], 1.0);
        }
    }

    #[test]
    fn histogram_half_and_half() {
        let h: RgbHistogram<f64> = compute_histogram(&half_black_white(), 64).unwrap();
        for c in 0..3 {
            assert_eq!(h.channel(c)[0], 0.5);
            assert_eq!(h.channel(c)[63], 0.5);
        }
    }

    #[test]
    fn bin_boundaries() {
        // 64 bins: values 0..=3 land in bin 0, 4 in bin 1
        let f = Frame::new(
            "s",
            0,
            0,
            RgbImage::new(2, 1, vec![3, 3, 3, 4, 4, 4]).unwrap(),
        );
        let h: RgbHistogram<f64> = compute_histogram(&f, 64).unwrap();
        assert_eq!(h.channel(0)[0], 0.5);
        assert_eq!(h.channel(0)[1], 0.5);
    }

    #[test]
    fn invalid_bins() {
        let f = solid([0; 3], 0, 0);
        for bad in [0, 3, 100, 512] {
            assert_eq!(
                compute_histogram::<f64>(&f, bad).unwrap_err(),
                SamplerError::InvalidBinCount(bad)
            );
        }
    }

    #[test]
    fn similarity_examples() {
        let black: RgbHistogram<f64> = compute_histogram(&solid([0; 3], 0, 0), 64).unwrap();
        let white: RgbHistogram<f64> = compute_histogram(&solid([255; 3], 0, 0), 64).unwrap();
        let half: RgbHistogram<f64> = compute_histogram(&half_black_white(), 64).unwrap();
        assert_eq!(similarity(&black, &black).unwrap(), 1.0);
        assert_eq!(similarity(&black, &white).unwrap(), 0.0);
        assert_eq!(similarity(&half, &black).unwrap(), 0.5);
    }

    #[test]
    fn similarity_exact_rational() {
        let half: RgbHistogram<Ratio<i64>> = compute_histogram(&half_black_white(), 64).unwrap();
        let black: RgbHistogram<Ratio<i64>> = compute_histogram(&solid([0; 3], 0, 0), 64).unwrap();
        assert_eq!(similarity(&half, &black).unwrap(), Ratio::new(1, 2));
    }

    #[test]
    fn bin_mismatch() {
        let f = solid([0; 3], 0, 0);
        let a: RgbHistogram<f64> = compute_histogram(&f, 64).unwrap();
        let b: RgbHistogram<f64> = compute_histogram(&f, 32).unwrap();
        assert_eq!(
            similarity(&a, &b).unwrap_err(),
            SamplerError::BinCountMismatch(64, 32)
        );
    }

    #[test]
    fn correlation_identical_is_one() {
        let a: RgbHistogram<f64> = compute_histogram(&half_black_white(), 64).unwrap();
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cadence_gate_skips_without_histogram() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        assert!(st.step(&solid([0; 3], 0, 0), &cfg).unwrap().is_forward());
        assert_eq!(st.next_tick_ms(), 100);
        assert_eq!(
            st.step(&solid([255; 3], 1, 50), &cfg).unwrap(),
            SampleDecision::BetweenTicks
        );
    }

    #[test]
    fn tick_advances_past_late_frames() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        st.step(&solid([0; 3], 0, 0), &cfg).unwrap();
        st.step(&solid([0; 3], 1, 250), &cfg).unwrap();
        assert_eq!(st.next_tick_ms(), 300);
        // exactly on a tick counts
        assert!(st.step(&solid([0; 3], 2, 300), &cfg).unwrap().is_considered());
    }

    #[test]
    fn alternating_screens_both_forward() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        assert!(st.step(&solid([0; 3], 0, 0), &cfg).unwrap().is_forward());
        assert!(st.step(&solid([255; 3], 1, 100), &cfg).unwrap().is_forward());
    }

    #[test]
    fn identical_sixty_seconds() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        let img = RgbImage::solid(8, 8, [30, 60, 90]).unwrap();
        let (mut fwd, mut considered) = (0, 0);
        for i in 0..3600u64 {
            let d = st
                .step(&Frame::new("s", i, i * 1000 / 60, img.clone()), &cfg)
                .unwrap();
            fwd += d.is_forward() as u32;
            considered += d.is_considered() as u32;
        }
        assert_eq!(fwd, 1);
        assert_eq!(considered, 600);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        st.step(&solid([0; 3], 5, 500), &cfg).unwrap();
        assert!(matches!(
            st.step(&solid([0; 3], 6, 400), &cfg),
            Err(SamplerError::OutOfOrderFrame { .. })
        ));
        assert!(matches!(
            st.step(&solid([0; 3], 5, 600), &cfg),
            Err(SamplerError::OutOfOrderFrame { .. })
        ));
    }

    #[test]
    fn reset_forces_forward() {
        let mut st = SamplerState::<f64>::new();
        let cfg = SamplerConfig::default();
        // reset on fresh state is a no-op
        st.reset_reference();
        assert_eq!(st, SamplerState::new());

        let popup = RgbImage::solid(8, 8, [200, 10, 10]).unwrap();
        st.step(&Frame::new("s", 0, 200, popup.clone()), &cfg).unwrap();
        // dismissal issued while handling t=230
        assert!(!st
            .step(&Frame::new("s", 1, 230, popup.clone()), &cfg)
            .unwrap()
            .is_considered());
        st.reset_reference();
        let d = st.step(&Frame::new("s", 2, 300, popup), &cfg).unwrap();
        assert_eq!(d, SampleDecision::Forward { similarity: None });
    }

    #[test]
    fn consecutive_mode_tracks_drift() {
        // slow fade: each step changes a quarter of the pixels
        let frames: Vec<Frame> = (0..5u32)
            .map(|k| {
                let img = RgbImage::from_fn(4, 4, |x, y| {
                    if y * 4 + x < k * 4 {
                        [255; 3]
                    } else {
                        [0; 3]
                    }
                })
                .unwrap();
                Frame::new("s", k as u64, k as u64 * 100, img)
            })
            .collect();
        let count = |mode| {
            let cfg = SamplerConfig {
                reference: mode,
                ..SamplerConfig::default()
            };
            let mut st = SamplerState::<f64>::new();
            frames
                .iter()
                .filter(|f| st.step(f, &cfg).unwrap().is_forward())
                .count()
        };
        // consecutive similarity is always 0.75 (< 0.8), so every frame passes;
        // against the last forwarded frame the same holds. Tighten with 0.7:
        assert_eq!(count(ReferenceMode::Consecutive), 5);
        assert_eq!(count(ReferenceMode::LastForwarded), 5);
        let slow = |mode| {
            let cfg = SamplerConfig {
                reference: mode,
                similarity_threshold: 0.7,
                ..SamplerConfig::default()
            };
            let mut st = SamplerState::<f64>::new();
            frames
                .iter()
                .filter(|f| st.step(f, &cfg).unwrap().is_forward())
                .count()
        };
        // consecutive comparison never sees a change below 0.7 after the first
        assert_eq!(slow(ReferenceMode::Consecutive), 1);
        // the drift against the last forwarded frame reaches 0.5 at k=2 and k=4
        assert_eq!(slow(ReferenceMode::LastForwarded), 3);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (1u32..6, 1u32..6).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |px| {
                Frame::new("p", 0, 0, RgbImage::new(w, h, px).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn histogram_channels_normalized(f in arb_frame(), bits in 0u32..9) {
            let h: RgbHistogram<f64> = compute_histogram(&f, 1 << bits).unwrap();
            for c in 0..3 {
                let s: f64 = h.channel(c).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(h.channel(c).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn similarity_symmetric_bounded(a in arb_frame(), b in arb_frame()) {
            let ha: RgbHistogram<f64> = compute_histogram(&a, 64).unwrap();
            let hb: RgbHistogram<f64> = compute_histogram(&b, 64).unwrap();
            let s = similarity(&ha, &hb).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, similarity(&hb, &ha).unwrap());
            prop_assert!((similarity(&ha, &ha).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn histogram_ignores_pixel_order(f in arb_frame(), seed in any::<u64>()) {
            let mut px: Vec<[u8; 3]> = f.pixels().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let n = px.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                px.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled = Frame::new("p", 0, 0,
                RgbImage::new(f.width(), f.height(), px.concat()).unwrap());
            let a: RgbHistogram<f64> = compute_histogram(&f, 64).unwrap();
            let b: RgbHistogram<f64> = compute_histogram(&shuffled, 64).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn never_forwards_similar(frames in proptest::collection::vec(arb_frame(), 1..30),
                                  gaps in proptest::collection::vec(0u64..250, 30)) {
            let cfg = SamplerConfig::default();
            let mut st = SamplerState::<f64>::new();
            let mut ts = 0;
            for (i, f) in frames.iter().enumerate() {
                ts += gaps[i];
                let frame = Frame::new("p", i as u64, ts, f.image().clone());
                let before = st.reference().cloned();
                let d = st.step(&frame, &cfg).unwrap();
                if let (SampleDecision::Forward { .. }, Some(r)) = (d, before) {
                    let h: RgbHistogram<f64> = compute_histogram(&frame, 64).unwrap();
                    prop_assert!(similarity(&r, &h).unwrap() < cfg.similarity_threshold);
                }
            }
        }

        #[test]
        fn considered_count_matches_ticks(duration in 1u64..20_000, fps in 20u64..120) {
            let cfg = SamplerConfig::default();
            let mut st = SamplerState::<f64>::new();
            let img = RgbImage::solid(2, 2, [1, 2, 3]).unwrap();
            let mut considered = 0u64;
            let mut i = 0u64;
            loop {
                let ts = i * 1000 / fps;
                if ts >= duration { break; }
                if st.step(&Frame::new("p", i, ts, img.clone()), &cfg).unwrap().is_considered() {
                    considered += 1;
                }
                i += 1;
            }
            let ticks = duration.div_ceil(cfg.interval_ms);
            prop_assert!(considered + 1 >= ticks && considered <= ticks + 1,
                "considered {} ticks {}", considered, ticks);
        }
    }
}
