//! Synthetic sea / land / sea-land clutter spectra and dataset handling.
//!
//! Sea clutter shows a pair of Bragg peaks symmetric about zero Doppler,
//! land clutter a single peak at zero Doppler, and the sea-land boundary
//! both. Spectra are Gaussian peaks on a uniform noise floor, min-max
//! normalised to `[-1, 1]`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;

use crate::error::{ensure, Error, Result};
use crate::nn::{Real, Tensor};

pub const SIGNAL_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClutterClass {
    Sea,
    Land,
    SeaLand,
}

impl ClutterClass {
    pub const ALL: [ClutterClass; 3] = [ClutterClass::Sea, ClutterClass::Land, ClutterClass::SeaLand];
    pub const COUNT: usize = 3;

    pub fn label(self) -> usize {
        match self {
            ClutterClass::Sea => 0,
            ClutterClass::Land => 1,
            ClutterClass::SeaLand => 2,
        }
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::Label(format!("class label {label} outside 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClutterClass::Sea => "sea",
            ClutterClass::Land => "land",
            ClutterClass::SeaLand => "sea-land",
        }
    }
}

/// Shape of the synthetic spectra. Offsets and widths are in bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumParams {
    pub length: usize,
    pub bragg_offset: f64,
    pub peak_width: f64,
    /// Peak amplitudes are drawn from `1 ± amp_jitter`.
    pub amp_jitter: f64,
    /// Peak positions shift by up to this many bins.
    pub doppler_jitter: f64,
    /// Amplitude of the additive uniform noise, relative to a unit peak.
    pub noise_floor: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self {
            length: SIGNAL_LEN,
            bragg_offset: 64.0,
            peak_width: 6.0,
            amp_jitter: 0.3,
            doppler_jitter: 5.0,
            noise_floor: 0.05,
        }
    }
}

impl SpectrumParams {
    /// Noise- and jitter-free variant, used for structural checks.
    pub fn noiseless(self) -> Self {
        Self {
            amp_jitter: 0.0,
            doppler_jitter: 0.0,
            noise_floor: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.length >= 8, Parameter, "signal length {} too short", self.length);
        ensure!(
            self.bragg_offset > 0.0 && self.peak_width > 0.0,
            Parameter,
            "bragg_offset and peak_width must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&self.amp_jitter),
            Parameter,
            "amp_jitter {} outside [0, 1]",
            self.amp_jitter
        );
        ensure!(
            self.doppler_jitter >= 0.0 && self.noise_floor >= 0.0,
            Parameter,
            "jitter and noise floor must be non-negative"
        );
        let reach = self.bragg_offset + self.doppler_jitter + 3.0 * self.peak_width;
        ensure!(
            reach < self.length as f64 / 2.0,
            Geometry,
            "peaks reach {reach} bins from centre, band half-width is {}",
            self.length / 2
        );
        Ok(())
    }

    fn center(&self) -> f64 {
        (self.length / 2) as f64
    }
}

fn add_peak(signal: &mut [f64], center: f64, width: f64, amplitude: f64) {
    let denom = 2.0 * width * width;
    for (i, s) in signal.iter_mut().enumerate() {
        let d = i as f64 - center;
        *s += amplitude * (-d * d / denom).exp();
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Raw (un-normalised) spectrum in double precision.
pub fn synth_raw<R: Rng + ?Sized>(class: ClutterClass, params: &SpectrumParams, rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    let mut s = vec![0.0; params.length];
    let c = params.center();
    let w = params.peak_width;
    let amp = |rng: &mut R| 1.0 + jitter(rng, params.amp_jitter);
    if matches!(class, ClutterClass::Sea | ClutterClass::SeaLand) {
        let offset = params.bragg_offset + jitter(rng, params.doppler_jitter);
        let (a1, a2) = (amp(rng), amp(rng));
        add_peak(&mut s, c - offset, w, a1);
        add_peak(&mut s, c + offset, w, a2);
    }
    if matches!(class, ClutterClass::Land | ClutterClass::SeaLand) {
        let shift = jitter(rng, params.doppler_jitter);
        let a = amp(rng);
        add_peak(&mut s, c + shift, w, a);
    }
    if params.noise_floor > 0.0 {
        for v in &mut s {
            *v += params.noise_floor * rng.gen::<f64>();
        }
    }
    Ok(s)
}

/// Normalised spectrum of `params.length` samples in `[-1, 1]`.
pub fn synth_spectrum<R: Rng + ?Sized>(class: ClutterClass, params: &SpectrumParams, rng: &mut R) -> Result<Vec<f32>> {
    let raw = synth_raw(class, params, rng)?;
    Ok(normalize(&raw)?.into_iter().map(|v| v as f32).collect())
}

/// Affine map sending the minimum to -1 and the maximum to +1.
pub fn normalize(signal: &[f64]) -> Result<Vec<f64>> {
    ensure!(!signal.is_empty(), Empty, "cannot normalise an empty signal");
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    ensure!(
        hi > lo && (hi - lo).is_finite(),
        DegenerateRange,
        "signal is constant ({lo})"
    );
    let span = hi - lo;
    Ok(signal.iter().map(|&v| (v - lo) / span * 2.0 - 1.0).collect())
}

/// Indices of peaks whose topographic prominence exceeds `min_prominence`.
///
/// A plateau counts once, at its first index.
pub fn prominent_peaks(signal: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = signal.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if signal[i] > signal[i - 1] {
            let mut j = i;
            while j + 1 < n && signal[j + 1] == signal[i] {
                j += 1;
            }
            if j + 1 < n && signal[j + 1] < signal[i] {
                let h = signal[i];
                let mut left_min = h;
                for &v in signal[..i].iter().rev() {
                    if v > h {
                        break;
                    }
                    left_min = left_min.min(v);
                }
                let mut right_min = h;
                for &v in &signal[j + 1..] {
                    if v > h {
                        break;
                    }
                    right_min = right_min.min(v);
                }
                if h - left_min.max(right_min) > min_prominence {
                    peaks.push(i);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
}

/// Fixed-length signals with a class label or `None` for unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBatch {
    signal_len: usize,
    data: Vec<f32>,
    labels: Vec<Option<ClutterClass>>,
}

impl SignalBatch {
    pub fn new(signal_len: usize) -> Self {
        Self {
            signal_len,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, signal: &[f32], label: Option<ClutterClass>) -> Result<()> {
        ensure!(
            signal.len() == self.signal_len,
            Dimension,
            "signal of length {} in a batch of length {}",
            signal.len(),
            self.signal_len
        );
        self.data.extend_from_slice(signal);
        self.labels.push(label);
        Ok(())
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signal(&self, i: usize) -> &[f32] {
        &self.data[i * self.signal_len..(i + 1) * self.signal_len]
    }

    pub fn label(&self, i: usize) -> Option<ClutterClass> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<ClutterClass>] {
        &self.labels
    }

    pub fn set_label(&mut self, i: usize, label: Option<ClutterClass>) {
        self.labels[i] = label;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], Option<ClutterClass>)> + '_ {
        self.data.chunks(self.signal_len).zip(self.labels.iter().copied())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.signal_len);
        for &i in indices {
            out.data.extend_from_slice(self.signal(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Stacks the selected signals into a `[B, 1, L]` tensor.
    pub fn to_tensor<T: Real>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.signal_len);
        for &i in indices {
            data.extend(self.signal(i).iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(&[indices.len(), 1, self.signal_len], data)
    }

    pub fn all_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.to_tensor(&idx)
    }

    pub fn signals_f64(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.signal_len)
            .map(|s| s.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// Signals with per-sample train/test role.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub signals: SignalBatch,
    pub roles: Vec<Role>,
}

impl Dataset {
    pub fn empty(signal_len: usize) -> Self {
        Self {
            signals: SignalBatch::new(signal_len),
            roles: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn push(&mut self, signal: &[f32], label: Option<ClutterClass>, role: Role) -> Result<()> {
        ensure!(
            role == Role::Train || label.is_some(),
            Label,
            "test samples must be labeled"
        );
        self.signals.push(signal, label)?;
        self.roles.push(role);
        Ok(())
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn labeled_train_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.roles[i] == Role::Train && self.signals.label(i).is_some())
            .collect()
    }

    pub fn unlabeled_train_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.roles[i] == Role::Train && self.signals.label(i).is_none())
            .collect()
    }

    pub fn train(&self) -> SignalBatch {
        self.signals.select(&self.indices(Role::Train))
    }

    pub fn test(&self) -> SignalBatch {
        self.signals.select(&self.indices(Role::Test))
    }

    /// Count of samples with the given role and label.
    pub fn count(&self, role: Role, label: Option<ClutterClass>) -> usize {
        (0..self.len())
            .filter(|&i| self.roles[i] == role && self.signals.label(i) == label)
            .count()
    }
}

/// Independent generator for sample `index`, so generation does not depend
/// on iteration order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `per_class` spectra of each class; the first `floor(train_frac *
/// per_class)` of each class are training samples. Every sample is labeled.
pub fn make_dataset(per_class: usize, train_frac: f64, params: &SpectrumParams, seed: u64) -> Result<Dataset> {
    ensure!(per_class >= 10, Parameter, "need at least 10 samples per class, got {per_class}");
    ensure!(
        train_frac > 0.0 && train_frac <= 1.0,
        Parameter,
        "train fraction {train_frac} outside (0, 1]"
    );
    let n_train = (train_frac * per_class as f64).floor() as usize;
    ensure!(n_train >= 1, Parameter, "train fraction {train_frac} leaves no training samples");
    params.validate()?;
    let mut ds = Dataset::empty(params.length);
    for class in ClutterClass::ALL {
        for i in 0..per_class {
            let index = (class.label() * per_class + i) as u64;
            let signal = synth_spectrum(class, params, &mut sample_rng(seed, index))?;
            let role = if i < n_train { Role::Train } else { Role::Test };
            ds.push(&signal, Some(class), role)?;
        }
    }
    Ok(ds)
}

/// Keeps labels on `n_lab / 3` randomly chosen training samples of each
/// class and marks the remaining training samples unlabeled. Test samples
/// are untouched.
pub fn split_semisupervised(dataset: &Dataset, n_lab: usize, seed: u64) -> Result<Dataset> {
    ensure!(
        n_lab % ClutterClass::COUNT == 0,
        Parameter,
        "n_lab {n_lab} is not divisible by {}",
        ClutterClass::COUNT
    );
    let per_class = n_lab / ClutterClass::COUNT;
    let mut out = dataset.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in ClutterClass::ALL {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.roles[i] == Role::Train && dataset.signals.label(i) == Some(class))
            .collect();
        ensure!(
            per_class <= idx.len(),
            Parameter,
            "n_lab {n_lab} needs {per_class} labeled {} samples, only {} available",
            class.name(),
            idx.len()
        );
        idx.shuffle(&mut rng);
        for &i in &idx[per_class..] {
            out.signals.set_label(i, None);
        }
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"SLCD";
const VERSION: u32 = 1;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let len = ds.signals.signal_len();
    let mut out = Vec::with_capacity(16 + ds.len() * (2 + 4 * len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    for i in 0..ds.len() {
        let label: i8 = ds.signals.label(i).map_or(-1, |c| c.label() as i8);
        out.push(label as u8);
        out.push(match ds.roles[i] {
            Role::Train => 0,
            Role::Test => 1,
        });
        for v in ds.signals.signal(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.pos + n <= self.bytes.len(),
            Format,
            "truncated file: need {n} bytes at offset {}, have {}",
            self.pos,
            self.bytes.len() - self.pos
        );
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    ensure!(r.take(4)? == MAGIC, Format, "bad magic, expected SLCD");
    let version = r.u32()?;
    ensure!(version == VERSION, Format, "unsupported dataset version {version}");
    let count = r.u32()? as usize;
    let len = r.u32()? as usize;
    ensure!(len == SIGNAL_LEN, Format, "signal length {len}, expected {SIGNAL_LEN}");
    let mut ds = Dataset::empty(len);
    let mut signal = vec![0f32; len];
    for i in 0..count {
        let head = r.take(2)?;
        let label = match head[0] as i8 {
            -1 => None,
            l @ 0..=2 => Some(ClutterClass::from_label(l as usize)?),
            l => return Err(Error::Format(format!("sample {i}: invalid label {l}"))),
        };
        let role = match head[1] {
            0 => Role::Train,
            1 => Role::Test,
            r => return Err(Error::Format(format!("sample {i}: invalid role {r}"))),
        };
        let body = r.take(4 * len)?;
        for (s, chunk) in signal.iter_mut().zip(body.chunks_exact(4)) {
            *s = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        ds.push(&signal, label, role)
            .map_err(|e| Error::Format(format!("sample {i}: {e}")))?;
    }
    ensure!(r.pos == bytes.len(), Format, "{} trailing bytes", bytes.len() - r.pos);
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(s: &[f32]) -> usize {
        s.iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }

    fn f64s(s: &[f32]) -> Vec<f64> {
        s.iter().map(|&v| v as f64).collect()
    }

    #[test]
    fn land_peak_sits_at_centre() {
        let p = SpectrumParams {
            doppler_jitter: 0.0,
            noise_floor: 0.0,
            ..SpectrumParams::default()
        };
        let s = synth_spectrum(ClutterClass::Land, &p, &mut sample_rng(1, 0)).unwrap();
        assert_eq!(argmax(&s), 256);
    }

    #[test]
    fn noiseless_sea_has_two_equal_bragg_peaks() {
        let p = SpectrumParams::default().noiseless();
        let s = f64s(&synth_spectrum(ClutterClass::Sea, &p, &mut sample_rng(1, 0)).unwrap());
        assert_eq!(prominent_peaks(&s, 0.0), vec![192, 320]);
        assert_eq!(s[192], s[320]);
    }

    #[test]
    fn default_sea_land_has_three_prominent_peaks() {
        let p = SpectrumParams::default();
        let s = f64s(&synth_spectrum(ClutterClass::SeaLand, &p, &mut sample_rng(7, 2000)).unwrap());
        assert_eq!(prominent_peaks(&s, 1.0).len(), 3);
    }

    #[test]
    fn normalize_maps_endpoints() {
        assert_eq!(normalize(&[0.0, 1.0, 2.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(normalize(&[-1.0, 0.3, 1.0]).unwrap(), vec![-1.0, 0.30000000000000004, 1.0]);
        assert!(matches!(normalize(&[2.0, 2.0]), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn params_outside_band_are_rejected() {
        let p = SpectrumParams {
            bragg_offset: 240.0,
            ..SpectrumParams::default()
        };
        assert!(matches!(p.validate(), Err(Error::Geometry(_))));
        assert!(synth_spectrum(ClutterClass::Sea, &p, &mut sample_rng(0, 0)).is_err());
    }

    #[test]
    fn small_dataset_split_counts() {
        let ds = make_dataset(10, 0.5, &SpectrumParams::default(), 3).unwrap();
        for c in ClutterClass::ALL {
            assert_eq!(ds.count(Role::Train, Some(c)), 5);
            assert_eq!(ds.count(Role::Test, Some(c)), 5);
        }
        assert!(make_dataset(9, 0.5, &SpectrumParams::default(), 3).is_err());
        assert!(make_dataset(10, 0.0, &SpectrumParams::default(), 3).is_err());
        assert!(make_dataset(10, 1.5, &SpectrumParams::default(), 3).is_err());
    }

    #[test]
    fn split_rejects_bad_counts() {
        let ds = make_dataset(10, 0.5, &SpectrumParams::default(), 3).unwrap();
        assert!(split_semisupervised(&ds, 7, 0).is_err());
        assert!(split_semisupervised(&ds, 18, 0).is_err());
        let s = split_semisupervised(&ds, 6, 0).unwrap();
        assert_eq!(s.labeled_train_indices().len(), 6);
        assert_eq!(s.unlabeled_train_indices().len(), 9);
        assert_eq!(s.test(), ds.test());
    }

    #[test]
    fn file_errors() {
        let ds = make_dataset(10, 0.5, &SpectrumParams::default(), 3).unwrap();
        let bytes = encode_dataset(&ds);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut short = bytes.clone();
        short[12..16].copy_from_slice(&256u32.to_le_bytes());
        assert!(matches!(decode_dataset(&short), Err(Error::Format(_))));
        let empty = encode_dataset(&Dataset::empty(SIGNAL_LEN));
        assert_eq!(empty.len(), 16);
        assert_eq!(decode_dataset(&empty).unwrap().len(), 0);
    }

    #[test]
    fn prominence_ignores_small_bumps() {
        let s = [0.0, 1.0, 0.9, 0.95, 0.0, 0.0, 2.0, 0.0];
        assert_eq!(prominent_peaks(&s, 0.0), vec![1, 3, 6]);
        assert_eq!(prominent_peaks(&s, 0.5), vec![1, 6]);
        // Plateau counted once.
        assert_eq!(prominent_peaks(&[0.0, 1.0, 1.0, 0.0], 0.5), vec![1]);
    }
}
