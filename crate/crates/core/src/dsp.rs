//! MFCC front end: mono PCM audio to 13-coefficient frames at a 10 ms hop.
//!
//! Pipeline: pre-emphasis, framing, Hamming window, power spectrum
//! (`|X|² / fft_size`), triangular mel filterbank, floored natural log, and an
//! orthonormal DCT-II truncated to `num_coefficients`.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

/// Mono audio, amplitude in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a mono RIFF WAV file (16-bit PCM or 32-bit IEEE float).
///
/// Multi-channel audio is rejected, not downmixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_wav_from(reader, &path.display().to_string())
}

fn read_wav_from<R: Read>(mut reader: hound::WavReader<R>, name: &str) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!(
            "{name}: {} channels; only mono audio is accepted",
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<Vec<_>, _>>(),
        (fmt, bits) => {
            return Err(Error::Input(format!(
                "{name}: unsupported sample format {fmt:?}/{bits} bit (need PCM16 or float32)"
            )))
        }
    }
    .map_err(|e| Error::Input(format!("{name}: {e}")))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono 16-bit PCM WAV file. Samples are clipped to `[-1, 1]`.
pub fn write_wav_pcm16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    /// Analysis window length in seconds.
    pub frame_length: f64,
    /// Hop between successive frames in seconds.
    pub frame_hop: f64,
    pub num_coefficients: usize,
    pub num_mel_filters: usize,
    pub pre_emphasis: f64,
    /// FFT length; `None` picks the next power of two at or above the window.
    pub fft_size: Option<usize>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_length: 0.025,
            frame_hop: 0.010,
            num_coefficients: 13,
            num_mel_filters: 26,
            pre_emphasis: 0.97,
            fft_size: None,
            log_floor: 1e-10,
        }
    }
}

/// Sample-domain framing derived from an [`MfccConfig`] at a given rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub frame_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
}

impl Framing {
    /// `1 + floor((len - frame) / hop)`, or 0 when the signal is shorter than one frame.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_samples {
            0
        } else {
            1 + (num_samples - self.frame_samples) / self.hop_samples
        }
    }
}

impl MfccConfig {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("frame_length", format!("{:?}", self.frame_length)),
            ("frame_hop", format!("{:?}", self.frame_hop)),
            ("num_coefficients", self.num_coefficients.to_string()),
            ("num_mel_filters", self.num_mel_filters.to_string()),
            ("pre_emphasis", format!("{:?}", self.pre_emphasis)),
            ("fft_size", self.fft_size.map_or_else(|| "auto".into(), |n| n.to_string())),
            ("log_floor", format!("{:?}", self.log_floor)),
        ]
    }

    /// Apply one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "frame_length" => self.frame_length = num(key, value)?,
            "frame_hop" => self.frame_hop = num(key, value)?,
            "num_coefficients" => self.num_coefficients = num(key, value)?,
            "num_mel_filters" => self.num_mel_filters = num(key, value)?,
            "pre_emphasis" => self.pre_emphasis = num(key, value)?,
            "fft_size" => {
                self.fft_size = match value {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "log_floor" => self.log_floor = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown feature key `{key}`"))),
        }
        Ok(())
    }

    pub fn framing(&self, sample_rate: u32) -> Result<Framing> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.frame_length > 0.0) || !(self.frame_hop > 0.0) {
            return Err(Error::Config("frame length and hop must be positive".into()));
        }
        if self.frame_hop > self.frame_length {
            return Err(Error::Config(format!(
                "frame hop {} s exceeds frame length {} s",
                self.frame_hop, self.frame_length
            )));
        }
        if self.num_coefficients == 0 || self.num_coefficients > self.num_mel_filters {
            return Err(Error::Config(format!(
                "need 0 < num_coefficients ({}) <= num_mel_filters ({})",
                self.num_coefficients, self.num_mel_filters
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        let rate = sample_rate as f64;
        let frame_samples = (self.frame_length * rate).round() as usize;
        let hop_samples = (self.frame_hop * rate).round() as usize;
        if frame_samples == 0 || hop_samples == 0 {
            return Err(Error::Config(format!(
                "frame of {frame_samples} / hop of {hop_samples} samples at {sample_rate} Hz"
            )));
        }
        let fft_size = match self.fft_size {
            Some(n) => {
                if !n.is_power_of_two() || n < frame_samples {
                    return Err(Error::Config(format!(
                        "fft_size {n} must be a power of two >= {frame_samples} frame samples"
                    )));
                }
                n
            }
            None => frame_samples.next_power_of_two(),
        };
        Ok(Framing {
            frame_samples,
            hop_samples,
            fft_size,
        })
    }
}

/// Mel value of a frequency in Hz: `2595 · log10(1 + f / 700)`.
pub fn mel_from_hz(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) {
        return Err(Error::Domain(format!("frequency {hz} Hz is negative or NaN")));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn hz_from_mel(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the non-negative FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    num_bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn num_filters(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.num_bins..(m + 1) * self.num_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Bin with the largest weight in filter `m` (the first, on ties).
    pub fn peak_bin(&self, m: usize) -> usize {
        let row = self.row(m);
        (1..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    }
}

/// Build `num_mel_filters` triangles with edges equally spaced on the mel
/// scale between 0 Hz and Nyquist, evaluated at bin frequencies `k·sr/fft`.
pub fn mel_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<MelFilterbank> {
    let framing = config.framing(sample_rate)?;
    let num_bins = framing.fft_size / 2 + 1;
    let m = config.num_mel_filters;
    let nyquist = sample_rate as f64 / 2.0;
    let top = mel_from_hz(nyquist)?;
    let edges: Vec<f64> = (0..m + 2)
        .map(|i| hz_from_mel(top * i as f64 / (m + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / framing.fft_size as f64;

    let mut weights = vec![0.0; m * num_bins];
    for f in 0..m {
        let (lo, center, hi) = (edges[f], edges[f + 1], edges[f + 2]);
        let row = &mut weights[f * num_bins..(f + 1) * num_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let hz = k as f64 * bin_hz;
            let rising = (hz - lo) / (center - lo);
            let falling = (hi - hz) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        if !row.iter().any(|&w| w > 0.0) {
            return Err(Error::Config(format!(
                "mel filter {f} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; \
                 use fewer filters or a larger fft_size"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        num_bins,
        centers_hz: edges[1..=m].to_vec(),
    })
}

/// Orthonormal DCT-II basis rows `0..keep` for length-`n` input.
fn dct_matrix(n: usize, keep: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * keep);
    for k in 0..keep {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            out.push(scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
        }
    }
    out
}

/// Reusable extractor for one `(config, sample_rate)` pair.
pub struct MfccExtractor {
    config: MfccConfig,
    framing: Framing,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("config", &self.config)
            .field("framing", &self.framing)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(config: MfccConfig, sample_rate: u32) -> Result<Self> {
        let framing = config.framing(sample_rate)?;
        let filterbank = mel_filterbank(&config, sample_rate)?;
        let n = framing.frame_samples;
        let window = if n == 1 {
            vec![1.0]
        } else {
            (0..n)
                .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                .collect()
        };
        let dct = dct_matrix(config.num_mel_filters, config.num_coefficients);
        let fft = FftPlanner::new().plan_fft_forward(framing.fft_size);
        Ok(Self {
            config,
            framing,
            window,
            filterbank,
            dct,
            fft,
        })
    }

    pub fn framing(&self) -> Framing {
        self.framing
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, samples: &[f64]) -> Result<FeatureSequence> {
        let Framing {
            frame_samples,
            hop_samples,
            fft_size,
        } = self.framing;
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        let frames = self.framing.frame_count(samples.len());
        if frames == 0 {
            return Err(Error::Input(format!(
                "signal of {} samples is shorter than one {frame_samples}-sample frame",
                samples.len()
            )));
        }

        let alpha = self.config.pre_emphasis;
        let emphasized: Vec<f64> = std::iter::once(samples[0])
            .chain(samples.windows(2).map(|w| w[1] - alpha * w[0]))
            .collect();

        let filters = self.config.num_mel_filters;
        let coeffs = self.config.num_coefficients;
        let floor = self.config.log_floor;
        let bins = self.filterbank.num_bins();
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; bins];
        let mut log_energy = vec![0.0; filters];
        let mut out = Vec::with_capacity(frames * coeffs);

        for t in 0..frames {
            let start = t * hop_samples;
            let frame = &emphasized[start..start + frame_samples];
            for (slot, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            for slot in &mut buf[frame_samples..] {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, x) in power.iter_mut().zip(&buf) {
                *p = x.norm_sqr() / fft_size as f64;
            }
            for (m, e) in log_energy.iter_mut().enumerate() {
                let energy: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                *e = energy.max(floor).ln();
            }
            for k in 0..coeffs {
                let basis = &self.dct[k * filters..(k + 1) * filters];
                out.push(basis.iter().zip(&log_energy).map(|(b, e)| b * e).sum());
            }
        }
        FeatureSequence::new(out, coeffs)
    }
}

/// One-shot MFCC extraction; builds a fresh [`MfccExtractor`].
pub fn extract_mfcc(wave: &Waveform, config: &MfccConfig) -> Result<FeatureSequence> {
    MfccExtractor::new(config.clone(), wave.sample_rate)?.extract(&wave.samples)
}

const FEATURE_MAGIC: &[u8; 4] = b"A2VF";
const FEATURE_VERSION: u32 = 1;

/// Serialize features: `"A2VF"`, u32 version, u32 T, u32 d, then `T·d`
/// little-endian f32 values, row-major.
pub fn write_feature_cache<W: Write>(mut out: W, features: &FeatureSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 4 * features.as_slice().len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(features.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    for &v in features.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_feature_cache<R: Read>(mut input: R) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Corrupt("feature cache shorter than its header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("feature cache has wrong magic bytes".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "feature cache version {version}, expected {FEATURE_VERSION}"
        )));
    }
    let (frames, dim) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 4 * frames * dim;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "feature cache is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureSequence::new(data, dim)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_feature_cache(std::io::BufWriter::new(file), features)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_feature_cache(std::io::BufReader::new(file))
}
