//! Synthesis-quality metrics: absolute distance (AD), cosine similarity
//! (CS) and Pearson correlation (PCC) between generated signals and their
//! nearest real training signals.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::models::Generator;
use crate::nn::Real;
use crate::synth::SignalBatch;

/// Generated signals are produced in chunks of this many samples.
const GENERATE_CHUNK: usize = 256;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    ensure!(
        a.len() == b.len(),
        Dimension,
        "signals of length {} and {}",
        a.len(),
        b.len()
    );
    ensure!(!a.is_empty(), Empty, "empty signal");
    Ok(())
}

/// Mean absolute elementwise difference.
pub fn absolute_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

fn cosine_raw(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    cosine_raw(a, b).ok_or_else(|| crate::Error::DegenerateRange("cosine similarity of a zero vector".into()))
}

fn centered(a: &[f64]) -> Vec<f64> {
    let m = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|x| x - m).collect()
}

/// Cosine similarity of the mean-centred signals.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let (ca, cb) = (centered(a), centered(b));
    // A constant input centres to exact zeros only up to rounding.
    let flat = |c: &[f64], orig: &[f64]| {
        let scale = orig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        c.iter().all(|x| x.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
    };
    ensure!(
        !flat(&ca, a) && !flat(&cb, b),
        DegenerateRange,
        "pearson correlation of a constant signal"
    );
    Ok(cosine_raw(&ca, &cb).expect("non-constant signals"))
}

fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest real signal (L2) for every synthetic signal. Ties go
/// to the lowest index.
pub fn pair_nearest(synthetic: &SignalBatch, real: &SignalBatch) -> Result<Vec<usize>> {
    ensure!(!synthetic.is_empty() && !real.is_empty(), Empty, "pairing needs both batches nonempty");
    ensure!(
        synthetic.signal_len() == real.signal_len(),
        Dimension,
        "synthetic length {} vs real length {}",
        synthetic.signal_len(),
        real.signal_len()
    );
    Ok(synthetic
        .iter()
        .map(|(s, _)| {
            let mut best = (f64::INFINITY, 0);
            for (j, (r, _)) in real.iter().enumerate() {
                let d = squared_l2(s, r);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

/// Anything that can produce a reproducible batch of signals.
pub trait SignalSource {
    fn signal_len(&self) -> usize;
    fn sample(&mut self, n: usize, seed: u64) -> Result<SignalBatch>;
}

impl<T: Real> SignalSource for Generator<T> {
    fn signal_len(&self) -> usize {
        crate::synth::SIGNAL_LEN
    }

    fn sample(&mut self, n: usize, seed: u64) -> Result<SignalBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SignalBatch::new(self.signal_len());
        let mut left = n;
        while left > 0 {
            let b = left.min(GENERATE_CHUNK);
            let z = self.sample_latent(b, &mut rng);
            let x = self.generate(&z)?;
            let row: Vec<f32> = x.data().iter().map(|v| v.as_f64() as f32).collect();
            for s in row.chunks(self.signal_len()) {
                out.push(s, None)?;
            }
            left -= b;
        }
        Ok(out)
    }
}

/// Replays stored signals in order, cycling when more are requested.
#[derive(Clone, Debug)]
pub struct Replayer {
    batch: SignalBatch,
}

impl Replayer {
    pub fn new(batch: SignalBatch) -> Result<Self> {
        ensure!(!batch.is_empty(), Empty, "nothing to replay");
        Ok(Self { batch })
    }
}

impl SignalSource for Replayer {
    fn signal_len(&self) -> usize {
        self.batch.signal_len()
    }

    fn sample(&mut self, n: usize, _seed: u64) -> Result<SignalBatch> {
        let idx: Vec<usize> = (0..n).map(|i| i % self.batch.len()).collect();
        let mut out = self.batch.select(&idx);
        for i in 0..out.len() {
            out.set_label(i, None);
        }
        Ok(out)
    }
}

/// Independent uniform noise in `[-1, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSource {
    pub signal_len: usize,
}

impl SignalSource for NoiseSource {
    fn signal_len(&self) -> usize {
        self.signal_len
    }

    fn sample(&mut self, n: usize, seed: u64) -> Result<SignalBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SignalBatch::new(self.signal_len);
        let mut s = vec![0f32; self.signal_len];
        for _ in 0..n {
            s.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..=1.0));
            out.push(&s, None)?;
        }
        Ok(out)
    }
}

/// Mean pairwise metrics over nearest-neighbour pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisReport {
    pub n_pairs: usize,
    pub ad: f64,
    pub cs: f64,
    pub pcc: f64,
}

impl SynthesisReport {
    pub const CSV_HEADER: [&'static str; 4] = ["n_pairs", "ad", "cs", "pcc"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        out.write_record([
            self.n_pairs.to_string(),
            self.ad.to_string(),
            self.cs.to_string(),
            self.pcc.to_string(),
        ])?;
        out.flush()?;
        Ok(())
    }
}

/// Metrics between already generated signals and the real set.
pub fn compare_batches(synthetic: &SignalBatch, real: &SignalBatch) -> Result<SynthesisReport> {
    let pairs = pair_nearest(synthetic, real)?;
    let (mut ad, mut cs, mut pcc) = (0.0, 0.0, 0.0);
    let to64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
    for (i, &j) in pairs.iter().enumerate() {
        let (a, b) = (to64(synthetic.signal(i)), to64(real.signal(j)));
        ad += absolute_distance(&a, &b)?;
        cs += cosine_similarity(&a, &b)?;
        pcc += pearson(&a, &b)?;
    }
    let n = pairs.len() as f64;
    Ok(SynthesisReport {
        n_pairs: pairs.len(),
        ad: ad / n,
        cs: cs / n,
        pcc: pcc / n,
    })
}

/// Samples `n_synth` signals from `source` and compares them with `real`.
pub fn synthesis_report<S: SignalSource + ?Sized>(
    source: &mut S,
    real: &SignalBatch,
    n_synth: usize,
    seed: u64,
) -> Result<SynthesisReport> {
    ensure!(n_synth >= 1, Parameter, "n_synth must be positive");
    let synthetic = source.sample(n_synth, seed)?;
    compare_batches(&synthetic, real)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f32]]) -> SignalBatch {
        let mut b = SignalBatch::new(rows[0].len());
        for r in rows {
            b.push(r, None).unwrap();
        }
        b
    }

    #[test]
    fn identities() {
        let x = [0.3, -1.0, 0.5, 0.9];
        assert_eq!(absolute_distance(&x, &x).unwrap(), 0.0);
        assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(absolute_distance(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        let a = batch(&[&[1.0, 2.0]]);
        assert!(pair_nearest(&a, &SignalBatch::new(2)).is_err());
        assert!(pair_nearest(&a, &batch(&[&[1.0, 2.0, 3.0]])).is_err());
    }

    #[test]
    fn nearest_ties_go_low() {
        let real = batch(&[&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]]);
        let syn = batch(&[&[0.0, 0.0], &[1.0, 0.0], &[-0.9, 0.1]]);
        assert_eq!(pair_nearest(&syn, &real).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn replayer_reproduces_its_source() {
        let real = batch(&[&[1.0, 0.0, 0.5], &[-1.0, 0.3, 0.2]]);
        let mut r = Replayer::new(real.clone()).unwrap();
        let rep = synthesis_report(&mut r, &real, 5, 0).unwrap();
        assert_eq!(rep.n_pairs, 5);
        assert_eq!(rep.ad, 0.0);
        assert!((rep.cs - 1.0).abs() < 1e-12 && (rep.pcc - 1.0).abs() < 1e-12);
        assert!(synthesis_report(&mut r, &real, 0, 0).is_err());
    }

    #[test]
    fn csv_row() {
        let rep = SynthesisReport {
            n_pairs: 3,
            ad: 0.5,
            cs: 0.25,
            pcc: -0.125,
        };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n_pairs,ad,cs,pcc\n3,0.5,0.25,-0.125\n");
    }
}
