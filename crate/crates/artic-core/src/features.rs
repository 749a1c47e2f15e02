//! Audio-to-feature front end.
//!
//! Mel filterbank extraction, per-utterance CMVN, context splicing, delta
//! augmentation of articulatory targets and speed-perturbation data
//! augmentation. All functions are pure; identical inputs and configuration
//! produce identical outputs (dither is the only stochastic element and is
//! driven by a fixed-seed generator so it is reproducible too).

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::mlpg::DeltaWindows;

/// Mono audio at a fixed sample rate, samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }
}

/// What a feature matrix holds; kept consistent with its column count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Fbk,
    Spliced,
    Bottleneck,
    Articulatory,
    Concat,
}

impl FeatureKind {
    pub fn as_u8(self) -> u8 {
        match self {
            FeatureKind::Fbk => 0,
            FeatureKind::Spliced => 1,
            FeatureKind::Bottleneck => 2,
            FeatureKind::Articulatory => 3,
            FeatureKind::Concat => 4,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(FeatureKind::Fbk),
            1 => Some(FeatureKind::Spliced),
            2 => Some(FeatureKind::Bottleneck),
            3 => Some(FeatureKind::Articulatory),
            4 => Some(FeatureKind::Concat),
            _ => None,
        }
    }
}

/// Frame-synchronous feature rows: T frames by D columns plus frame metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    frame_shift_ms: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_shift_ms: f64, kind: FeatureKind) -> Result<Self> {
        let (t, d) = data.dim();
        if t == 0 || d == 0 {
            return Err(Error::Data(format!(
                "feature matrix must be non-empty, got {t}x{d}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature matrix contains non-finite values".into()));
        }
        if kind == FeatureKind::Articulatory && d != ArticulatoryLayout::STATIC_DIM && d != 3 * ArticulatoryLayout::STATIC_DIM {
            return Err(Error::Data(format!(
                "articulatory features must have {} or {} columns, got {d}",
                ArticulatoryLayout::STATIC_DIM,
                3 * ArticulatoryLayout::STATIC_DIM
            )));
        }
        Ok(FeatureMatrix {
            data,
            frame_shift_ms,
            kind,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// Window applied per frame before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    Povey,
}

/// Mel filterbank configuration. Defaults follow the common 40-band,
/// 25 ms / 10 ms ASR front end.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub preemphasis: f64,
    pub window: WindowKind,
    pub dither: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            n_mels: 40,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            preemphasis: 0.97,
            window: WindowKind::Hamming,
            dither: 0.0,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 2 {
            return Err(Error::Config("n_mels must be at least 2".into()));
        }
        if self.frame_length_ms < self.frame_shift_ms {
            return Err(Error::Config(
                "frame_length_ms must be >= frame_shift_ms".into(),
            ));
        }
        if self.frame_length_ms <= 0.0 || self.frame_shift_ms <= 0.0 {
            return Err(Error::Config("frame timings must be positive".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn frame_length_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }
}

/// The fixed 6-articulator x 3-axis layout of the trajectory vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArticulatoryLayout;

impl ArticulatoryLayout {
    pub const ARTICULATORS: [&'static str; 6] = ["TT", "TM", "TB", "UL", "LL", "LI"];
    pub const AXES: [&'static str; 3] = ["X", "Y", "Z"];
    pub const STATIC_DIM: usize = 18;

    /// Column name for a static dimension, e.g. `TT.X` for column 0.
    pub fn dim_name(d: usize) -> String {
        let art = Self::ARTICULATORS[d / 3];
        let axis = Self::AXES[d % 3];
        format!("{art}.{axis}")
    }
}

/// T x 18 articulatory coordinates in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    data: Array2<f64>,
}

impl TrajectorySet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() != ArticulatoryLayout::STATIC_DIM {
            return Err(Error::Data(format!(
                "trajectory set must have {} columns, got {}",
                ArticulatoryLayout::STATIC_DIM,
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Data("trajectory set must have at least one frame".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("trajectory set contains non-finite values".into()));
        }
        Ok(TrajectorySet { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// View as an articulatory feature matrix (frame shift in ms).
    pub fn to_features(&self, frame_shift_ms: f64) -> FeatureMatrix {
        FeatureMatrix::new(self.data.clone(), frame_shift_ms, FeatureKind::Articulatory)
            .expect("trajectory set is always a valid articulatory matrix")
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filter weights over DFT bins, linear in mel.
/// Returns an `n_mels x n_bins` matrix; `n_bins = n_fft / 2 + 1`.
fn mel_filter_weights(n_mels: usize, n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(nyquist);
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64)
        .collect();

    let mut weights = Array2::zeros((n_mels, n_bins));
    for k in 0..n_bins {
        let freq = k as f64 * sample_rate as f64 / n_fft as f64;
        let mel = hz_to_mel(freq);
        for m in 0..n_mels {
            let (lo, center, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            let w = if mel >= lo && mel <= center {
                (mel - lo) / (center - lo)
            } else if mel > center && mel <= hi {
                (hi - mel) / (hi - center)
            } else {
                0.0
            };
            weights[[m, k]] = w;
        }
    }
    weights
}

/// Center frequency (Hz) of mel band `k` under the same band edges used by
/// [`mel_filterbank`]. Exposed for tests and synthetic stimuli.
pub fn mel_band_center_hz(k: usize, n_mels: usize, sample_rate: u32) -> f64 {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_hi = hz_to_mel(nyquist);
    mel_to_hz(mel_hi * (k + 1) as f64 / (n_mels + 1) as f64)
}

fn window_coefficients(kind: WindowKind, len: usize) -> Array1<f64> {
    let denom = (len - 1) as f64;
    Array1::from_shape_fn(len, |n| {
        let c = (2.0 * std::f64::consts::PI * n as f64 / denom).cos();
        match kind {
            WindowKind::Hamming => 0.54 - 0.46 * c,
            WindowKind::Povey => (0.5 - 0.5 * c).powf(0.85),
        }
    })
}

/// Log mel filterbank features.
///
/// Frames the waveform (`T = floor((N - frame_len) / shift) + 1`), applies
/// per-frame dither, pre-emphasis and the configured window, takes a DFT
/// padded to the next power of two and accumulates triangular mel-band
/// energies, returning their natural logs floored at `log_floor`.
pub fn mel_filterbank(wav: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if wav.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("waveform contains non-finite samples".into()));
    }
    let frame_len = cfg.frame_length_samples(wav.sample_rate);
    let shift = cfg.frame_shift_samples(wav.sample_rate);
    if frame_len == 0 || shift == 0 {
        return Err(Error::Config("frame length/shift round to zero samples".into()));
    }
    if wav.samples.len() < frame_len {
        return Err(Error::Data(format!(
            "empty-feature: audio of {} samples is shorter than one {}-sample frame",
            wav.samples.len(),
            frame_len
        )));
    }

    let n_frames = (wav.samples.len() - frame_len) / shift + 1;
    let n_fft = frame_len.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let weights = mel_filter_weights(cfg.n_mels, n_fft, wav.sample_rate);
    let window = window_coefficients(cfg.window, frame_len);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);

    // Dither is reproducible: the generator seed is fixed, not time-derived.
    let mut dither_rng = ChaCha8Rng::seed_from_u64(0);

    let mut out = Array2::zeros((n_frames, cfg.n_mels));
    let mut frame = vec![0.0f64; frame_len];
    let mut fft_buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = t * shift;
        frame.copy_from_slice(&wav.samples[start..start + frame_len]);
        if cfg.dither > 0.0 {
            for s in frame.iter_mut() {
                *s += cfg.dither * dither_rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        // Pre-emphasis within the frame; the first sample is scaled by
        // (1 - coeff) as in the usual ASR front ends.
        for i in (1..frame_len).rev() {
            frame[i] -= cfg.preemphasis * frame[i - 1];
        }
        frame[0] -= cfg.preemphasis * frame[0];

        for i in 0..n_fft {
            let v = if i < frame_len { frame[i] * window[i] } else { 0.0 };
            fft_buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut fft_buf);

        for m in 0..cfg.n_mels {
            let mut energy = 0.0;
            for k in 0..n_bins {
                let w = weights[[m, k]];
                if w != 0.0 {
                    energy += w * fft_buf[k].norm_sqr();
                }
            }
            out[[t, m]] = energy.max(cfg.log_floor).ln();
        }
    }

    FeatureMatrix::new(out, cfg.frame_shift_ms, FeatureKind::Fbk)
}

/// Per-utterance cepstral mean and variance normalization: each column ends
/// up with mean 0 and unit variance (variance floored at 1e-8).
pub fn utterance_cmvn(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = fm.frames();
    if t < 2 {
        return Err(Error::Data(format!(
            "cmvn needs at least 2 frames, got {t}"
        )));
    }
    let mut data = fm.data.clone();
    for mut col in data.columns_mut() {
        let mean = col.sum() / t as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = 1.0 / var.max(1e-8).sqrt();
        col.mapv_inplace(|v| (v - mean) * scale);
    }
    FeatureMatrix::new(data, fm.frame_shift_ms, fm.kind)
}

/// Concatenate a symmetric context window around every frame, replicating
/// edge frames at the boundaries. Output is `T x D*(left+1+right)`.
pub fn splice_context(fm: &FeatureMatrix, left: usize, right: usize) -> Result<FeatureMatrix> {
    let (t, d) = fm.data.dim();
    let width = left + 1 + right;
    let mut out = Array2::zeros((t, d * width));
    for ti in 0..t {
        for (w, offset) in (-(left as isize)..=(right as isize)).enumerate() {
            let src = (ti as isize + offset).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![ti, w * d..(w + 1) * d])
                .assign(&fm.data.row(src));
        }
    }
    FeatureMatrix::new(out, fm.frame_shift_ms, FeatureKind::Spliced)
}

/// Augment an 18-dim articulatory matrix with its delta and delta-delta
/// streams, producing `T x 54 = [static | delta | delta-delta]`.
pub fn append_deltas(fm: &FeatureMatrix, win: &DeltaWindows) -> Result<FeatureMatrix> {
    if fm.kind != FeatureKind::Articulatory || fm.dim() != ArticulatoryLayout::STATIC_DIM {
        return Err(Error::Data(format!(
            "append_deltas expects an articulatory matrix with {} columns, got kind {:?} with {}",
            ArticulatoryLayout::STATIC_DIM,
            fm.kind,
            fm.dim()
        )));
    }
    let (t, d) = fm.data.dim();
    let mut out = Array2::zeros((t, 3 * d));
    out.slice_mut(s![.., 0..d]).assign(&fm.data);
    for (stream, coeffs) in [(1, win.delta()), (2, win.delta_delta())] {
        let half = coeffs.len() as isize / 2;
        for ti in 0..t {
            for di in 0..d {
                let mut acc = 0.0;
                for (ci, &c) in coeffs.iter().enumerate() {
                    let offset = ci as isize - half;
                    let src = (ti as isize + offset).clamp(0, t as isize - 1) as usize;
                    acc += c * fm.data[[src, di]];
                }
                out[[ti, stream * d + di]] = acc;
            }
        }
    }
    FeatureMatrix::new(out, fm.frame_shift_ms, FeatureKind::Articulatory)
}

/// Speed perturbation by resampling the waveform at positions `t * factor`
/// with linear interpolation. Both tempo and pitch scale by `factor`; the
/// sample rate is unchanged and the output holds `round(N / factor)` samples.
pub fn speed_perturb(wav: &Waveform, factor: f64) -> Result<Waveform> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Config(format!(
            "speed factor must lie in [0.5, 2.0], got {factor}"
        )));
    }
    let n = wav.samples.len();
    if n == 0 {
        return Ok(wav.clone());
    }
    let out_len = (n as f64 / factor).round() as usize;
    let mut samples = Vec::with_capacity(out_len);
    for t in 0..out_len {
        let pos = t as f64 * factor;
        let i = (pos.floor() as usize).min(n - 1);
        let j = (i + 1).min(n - 1);
        let frac = pos - i as f64;
        samples.push(wav.samples[i] * (1.0 - frac) + wav.samples[j] * frac);
    }
    Ok(Waveform {
        samples,
        sample_rate: wav.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sine(freq: f64, sample_rate: u32, seconds: f64) -> Waveform {
        let n = (sample_rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin())
            .collect();
        Waveform::new(samples, sample_rate).unwrap()
    }

    #[test]
    fn frame_count_one_second_16k() {
        let wav = sine(440.0, 16000, 1.0);
        let fm = mel_filterbank(&wav, &FbankConfig::default()).unwrap();
        assert_eq!(fm.frames(), 98);
        assert_eq!(fm.dim(), 40);
    }

    #[test]
    fn silence_hits_log_floor() {
        let wav = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let cfg = FbankConfig::default();
        let fm = mel_filterbank(&wav, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(fm.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_audio_is_an_error() {
        let wav = Waveform::new(vec![0.1; 100], 16000).unwrap();
        let err = mel_filterbank(&wav, &FbankConfig::default()).unwrap_err();
        assert!(err.to_string().contains("empty-feature"));
    }

    /// Independent oracle: naive DFT magnitudes plus the triangular weights,
    /// written without the fft/matrix plumbing of the implementation.
    fn oracle_frame_mel(frame: &[f64], cfg: &FbankConfig, sample_rate: u32) -> Vec<f64> {
        let mut x = frame.to_vec();
        for i in (1..x.len()).rev() {
            x[i] -= cfg.preemphasis * x[i - 1];
        }
        x[0] -= cfg.preemphasis * x[0];
        let n = x.len();
        for (i, v) in x.iter_mut().enumerate() {
            let c = (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            *v *= match cfg.window {
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Povey => (0.5 - 0.5 * c).powf(0.85),
            };
        }
        let n_fft = n.next_power_of_two();
        let n_bins = n_fft / 2 + 1;
        let mut power = vec![0.0; n_bins];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n_fft as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            *p = re * re + im * im;
        }
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let nyq = sample_rate as f64 / 2.0;
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel(nyq) * i as f64 / (cfg.n_mels + 1) as f64)
            .collect();
        (0..cfg.n_mels)
            .map(|m| {
                let mut e = 0.0;
                for (k, &p) in power.iter().enumerate() {
                    let f = mel(k as f64 * sample_rate as f64 / n_fft as f64);
                    let w = if f >= edges[m] && f <= edges[m + 1] {
                        (f - edges[m]) / (edges[m + 1] - edges[m])
                    } else if f > edges[m + 1] && f <= edges[m + 2] {
                        (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])
                    } else {
                        0.0
                    };
                    e += w * p;
                }
                e.max(cfg.log_floor).ln()
            })
            .collect()
    }

    #[test]
    fn sinusoid_at_band_center_peaks_in_that_band() {
        let cfg = FbankConfig::default();
        let sr = 16000;
        for k in [8usize, 15, 22, 30] {
            let freq = mel_band_center_hz(k, cfg.n_mels, sr);
            let wav = sine(freq, sr, 0.5);
            let fm = mel_filterbank(&wav, &cfg).unwrap();
            // Time-averaged band energies.
            let avg: Vec<f64> = (0..cfg.n_mels)
                .map(|m| fm.data().column(m).sum() / fm.frames() as f64)
                .collect();
            let argmax = avg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k, "band center {freq:.1} Hz should peak in band {k}");
        }
    }

    #[test]
    fn matches_direct_dft_oracle() {
        let cfg = FbankConfig::default();
        let sr = 16000;
        let wav = sine(700.0, sr, 0.05); // 800 samples -> a few frames
        let fm = mel_filterbank(&wav, &cfg).unwrap();
        let frame_len = cfg.frame_length_samples(sr);
        let shift = cfg.frame_shift_samples(sr);
        for t in 0..fm.frames() {
            let oracle = oracle_frame_mel(&wav.samples[t * shift..t * shift + frame_len], &cfg, sr);
            for m in 0..cfg.n_mels {
                let a = fm.data()[[t, m]];
                let b = oracle[m];
                assert!(
                    (a - b).abs() <= 1e-8 * (1.0 + b.abs()),
                    "frame {t} band {m}: {a} vs oracle {b}"
                );
            }
        }
    }

    #[test]
    fn cmvn_two_point_column() {
        let fm = FeatureMatrix::new(array![[1.0], [3.0]], 10.0, FeatureKind::Fbk).unwrap();
        let out = utterance_cmvn(&fm).unwrap();
        assert!((out.data()[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((out.data()[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cmvn_is_idempotent() {
        let fm = FeatureMatrix::new(
            Array2::from_shape_fn((20, 3), |(i, j)| (i as f64 * 0.7 + j as f64).sin()),
            10.0,
            FeatureKind::Fbk,
        )
        .unwrap();
        let once = utterance_cmvn(&fm).unwrap();
        let twice = utterance_cmvn(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cmvn_moments_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fm = FeatureMatrix::new(
            Array2::from_shape_fn((50, 40), |_| rng.random::<f64>() * 4.0 - 2.0),
            10.0,
            FeatureKind::Fbk,
        )
        .unwrap();
        let out = utterance_cmvn(&fm).unwrap();
        for col in out.data().columns() {
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cmvn_rejects_single_frame() {
        let fm = FeatureMatrix::new(array![[1.0, 2.0]], 10.0, FeatureKind::Fbk).unwrap();
        assert!(matches!(utterance_cmvn(&fm), Err(Error::Data(_))));
    }

    #[test]
    fn splice_shapes_and_identity() {
        let fm = FeatureMatrix::new(
            Array2::from_shape_fn((5, 40), |(i, j)| (i * 40 + j) as f64),
            10.0,
            FeatureKind::Fbk,
        )
        .unwrap();
        let spliced = splice_context(&fm, 1, 1).unwrap();
        assert_eq!((spliced.frames(), spliced.dim()), (5, 120));
        let ident = splice_context(&fm, 0, 0).unwrap();
        assert_eq!(ident.data(), fm.data());

        // Center block recovers the original.
        let center = spliced.data().slice(s![.., 40..80]).to_owned();
        assert_eq!(&center, fm.data());
    }

    #[test]
    fn splice_single_frame_replicates_edges() {
        let fm = FeatureMatrix::new(array![[1.0, 2.0]], 10.0, FeatureKind::Fbk).unwrap();
        let spliced = splice_context(&fm, 2, 2).unwrap();
        assert_eq!(spliced.dim(), 10);
        let row = spliced.data().row(0);
        for w in 0..5 {
            assert_eq!(row[2 * w], 1.0);
            assert_eq!(row[2 * w + 1], 2.0);
        }
    }

    fn arti(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(data, 10.0, FeatureKind::Articulatory).unwrap()
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let fm = arti(Array2::from_elem((6, 18), 2.5));
        let out = append_deltas(&fm, &DeltaWindows::default()).unwrap();
        assert_eq!(out.dim(), 54);
        assert!(out.data().slice(s![.., 18..54]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deltas_of_ramp_are_one_then_zero_interior() {
        let fm = arti(Array2::from_shape_fn((8, 18), |(t, _)| t as f64));
        let out = append_deltas(&fm, &DeltaWindows::default()).unwrap();
        for t in 1..7 {
            for d in 0..18 {
                assert!((out.data()[[t, 18 + d]] - 1.0).abs() < 1e-12);
                assert!(out.data()[[t, 36 + d]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deltas_match_convolution_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fm = arti(Array2::from_shape_fn((7, 18), |_| rng.random::<f64>() * 6.0 - 3.0));
        let out = append_deltas(&fm, &DeltaWindows::default()).unwrap();
        let x = fm.data();
        let clamp = |t: isize| x.row(t.clamp(0, 6) as usize).to_owned();
        for t in 0..7isize {
            let delta = (clamp(t + 1).mapv(|v| 0.5 * v) - clamp(t - 1).mapv(|v| 0.5 * v)).to_owned();
            let accel = clamp(t - 1) - clamp(t).mapv(|v| 2.0 * v) + clamp(t + 1);
            for d in 0..18 {
                assert!((out.data()[[t as usize, 18 + d]] - delta[d]).abs() < 1e-12);
                assert!((out.data()[[t as usize, 36 + d]] - accel[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deltas_reject_wrong_kind() {
        let fm = FeatureMatrix::new(Array2::zeros((4, 18)), 10.0, FeatureKind::Fbk).unwrap();
        assert!(append_deltas(&fm, &DeltaWindows::default()).is_err());
    }

    #[test]
    fn speed_perturb_identity_and_length() {
        let wav = sine(100.0, 16000, 1.0);
        let same = speed_perturb(&wav, 1.0).unwrap();
        assert_eq!(same.samples, wav.samples);
        let halved = speed_perturb(&wav, 2.0).unwrap();
        assert_eq!(halved.samples.len(), 8000);
        assert!(speed_perturb(&wav, 2.5).is_err());
    }

    #[test]
    fn speed_perturb_scales_dominant_frequency() {
        let sr = 16000u32;
        let wav = sine(100.0, sr, 1.0);
        let fast = speed_perturb(&wav, 1.1).unwrap();
        // DFT peak of the perturbed signal.
        let n = fast.samples.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..400 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in fast.samples.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            let p = re * re + im * im;
            if p > best.1 {
                best = (k, p);
            }
        }
        let bin_hz = sr as f64 / n as f64;
        let peak_hz = best.0 as f64 * bin_hz;
        assert!(
            (peak_hz - 110.0).abs() <= bin_hz,
            "expected ~110 Hz peak, got {peak_hz}"
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn frame_count_formula(n in 400usize..8000, extra_ms in 0.0f64..30.0) {
                let cfg = FbankConfig {
                    frame_length_ms: 10.0 + extra_ms,
                    frame_shift_ms: 10.0,
                    ..FbankConfig::default()
                };
                let sr = 16000;
                let frame_len = cfg.frame_length_samples(sr);
                prop_assume!(n >= frame_len);
                let wav = Waveform::new(vec![0.25; n], sr).unwrap();
                let fm = mel_filterbank(&wav, &cfg).unwrap();
                let shift = cfg.frame_shift_samples(sr);
                prop_assert_eq!(fm.frames(), (n - frame_len) / shift + 1);
            }

            #[test]
            fn splice_center_block_recovers_input(t in 1usize..12, d in 1usize..8,
                                                  left in 0usize..4, right in 0usize..4) {
                let data = Array2::from_shape_fn((t, d), |(i, j)| (i * 31 + j * 7) as f64 * 0.1);
                let fm = FeatureMatrix::new(data.clone(), 10.0, FeatureKind::Fbk).unwrap();
                let spliced = splice_context(&fm, left, right).unwrap();
                let center = spliced.data().slice(s![.., left * d..(left + 1) * d]).to_owned();
                prop_assert_eq!(center, data);
            }

            #[test]
            fn speed_roundtrip_length(n in 100usize..20_000, f in 0.5f64..2.0) {
                let wav = Waveform::new(vec![0.1; n], 16000).unwrap();
                let there = speed_perturb(&wav, f).unwrap();
                let back = speed_perturb(&there, 1.0 / f).unwrap();
                prop_assert!((back.samples.len() as isize - n as isize).abs() <= 1);
            }

            #[test]
            fn delta_delta_of_linear_trajectory_is_zero_interior(t in 3usize..12,
                                                                 a in -2.0f64..2.0,
                                                                 b in -5.0f64..5.0) {
                let data = Array2::from_shape_fn((t, 18), |(i, d)| a * i as f64 + b + d as f64);
                let fm = arti(data);
                let out = append_deltas(&fm, &DeltaWindows::default()).unwrap();
                for ti in 1..t - 1 {
                    for d in 0..18 {
                        prop_assert!(out.data()[[ti, 36 + d]].abs() < 1e-10);
                    }
                }
            }
        }
    }
}
