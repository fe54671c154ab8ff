//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WLSG"  version: u32 = 1  count: u32  flags: u8 (bit 0: optimizer state)
//! count x { name_len: u16, name: utf-8, ndims: u8, dims: u32 x ndims, values: f32 x prod(dims) }
//! ```
//!
//! Network tensors are named `<net>.<layer>.<param>` (`weight`, `bias`,
//! `gamma`, `beta`, `running_mean`, `running_var`); optimizer state is
//! `adam.<net>.m.<k>`, `adam.<net>.v.<k>` and `adam.<net>.step`.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::models::{Discriminator, Generator};
use crate::nn::{AdamState, Network, Real};

const MAGIC: &[u8; 4] = b"WLSG";
const VERSION: u32 = 1;
const FLAG_OPTIMIZER: u8 = 1;

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    pub has_optimizer: bool,
}

fn to_f32<T: Real>(xs: &[T]) -> Vec<f32> {
    xs.iter().map(|x| x.as_f64() as f32).collect()
}

fn from_f32<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&x| T::of(f64::from(x))).collect()
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], values: Vec<f32>) -> Result<()> {
        let name = name.into();
        ensure!(
            dims.iter().product::<usize>() == values.len(),
            Format,
            "entry {name}: dims {dims:?} do not match {} values",
            values.len()
        );
        ensure!(self.get(&name).is_none(), Format, "duplicate entry {name}");
        self.entries.push(Entry {
            name,
            dims: dims.to_vec(),
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str, dims: &[usize]) -> Result<&Entry> {
        let e = self
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name}")))?;
        ensure!(
            e.dims == dims,
            Format,
            "entry {name} has dims {:?}, expected {dims:?}",
            e.dims
        );
        Ok(e)
    }

    /// Adds every parameter and batch-norm statistic of `net`.
    pub fn add_network<T: Real>(&mut self, prefix: &str, net: &Network<T>) -> Result<()> {
        for (name, t) in net.named_params() {
            self.push(format!("{prefix}.{name}"), t.shape(), to_f32(t.data()))?;
        }
        for (i, s) in net.norm_stats() {
            let c = s.channels();
            self.push(format!("{prefix}.{i}.running_mean"), &[c], to_f32(&s.running_mean))?;
            self.push(format!("{prefix}.{i}.running_var"), &[c], to_f32(&s.running_var))?;
        }
        Ok(())
    }

    /// Overwrites the parameters and statistics of `net`; shapes must match.
    pub fn restore_network<T: Real>(&self, prefix: &str, net: &mut Network<T>) -> Result<()> {
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(net.params_mut()) {
            let e = self.require(&format!("{prefix}.{name}"), t.shape())?;
            t.data_mut().copy_from_slice(&from_f32::<T>(&e.values));
        }
        for (i, s) in net.norm_stats_mut() {
            let c = s.channels();
            s.running_mean = from_f32(&self.require(&format!("{prefix}.{i}.running_mean"), &[c])?.values);
            s.running_var = from_f32(&self.require(&format!("{prefix}.{i}.running_var"), &[c])?.values);
        }
        Ok(())
    }

    pub fn add_adam<T: Real>(&mut self, net: &str, state: &AdamState<T>) -> Result<()> {
        for (k, (m, v)) in state.first_moment.iter().zip(&state.second_moment).enumerate() {
            self.push(format!("adam.{net}.m.{k}"), &[m.len()], to_f32(m))?;
            self.push(format!("adam.{net}.v.{k}"), &[v.len()], to_f32(v))?;
        }
        // Split so both halves are exact in f32.
        let step = state.step;
        self.push(
            format!("adam.{net}.step"),
            &[2],
            vec![(step & 0xFF_FFFF) as f32, (step >> 24) as f32],
        )?;
        self.has_optimizer = true;
        Ok(())
    }

    pub fn restore_adam<T: Real>(&self, net: &str, state: &mut AdamState<T>) -> Result<()> {
        for k in 0..state.first_moment.len() {
            let n = state.first_moment[k].len();
            state.first_moment[k] = from_f32(&self.require(&format!("adam.{net}.m.{k}"), &[n])?.values);
            state.second_moment[k] = from_f32(&self.require(&format!("adam.{net}.v.{k}"), &[n])?.values);
        }
        let s = &self.require(&format!("adam.{net}.step"), &[2])?.values;
        state.step = s[0] as u64 | ((s[1] as u64) << 24);
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        out.push(if self.has_optimizer { FLAG_OPTIMIZER } else { 0 });
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {}", e.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let nd = u8::try_from(e.dims.len()).map_err(|_| Error::Format(format!("too many dims in {}", e.name)))?;
            out.push(nd);
            for &d in &e.dims {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension too large in {}", e.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Format, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(version == VERSION, Format, "unsupported checkpoint version {version}");
        let count = r.u32()? as usize;
        let flags = r.take(1)?[0];
        ensure!(flags & !FLAG_OPTIMIZER == 0, Format, "unknown checkpoint flags {flags:#04x}");
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not utf-8".into()))?
                .to_string();
            let nd = r.take(1)?[0] as usize;
            let dims = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("entry {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ck.push(name, &dims, values)?;
        }
        ensure!(r.pos == bytes.len(), Format, "{} trailing bytes", bytes.len() - r.pos);
        ck.has_optimizer = flags & FLAG_OPTIMIZER != 0;
        Ok(ck)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
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
            "checkpoint truncated at byte {}",
            self.pos
        );
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Checkpoint of both networks, with optimizer state when given.
pub fn save_models<T: Real>(
    generator: Option<&Generator<T>>,
    discriminator: &Discriminator<T>,
    optimizers: Option<(Option<&AdamState<T>>, &AdamState<T>)>,
) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    if let Some(g) = generator {
        ck.add_network(GENERATOR, g.network())?;
    }
    ck.add_network(DISCRIMINATOR, discriminator.network())?;
    if let Some((opt_g, opt_d)) = optimizers {
        if let Some(opt_g) = opt_g {
            ck.add_adam(GENERATOR, opt_g)?;
        }
        ck.add_adam(DISCRIMINATOR, opt_d)?;
    }
    Ok(ck)
}

/// Rebuilds the generator; the latent width comes from the first weight.
pub fn load_generator<T: Real>(ck: &Checkpoint) -> Result<Generator<T>> {
    let first = ck
        .get(&format!("{GENERATOR}.0.weight"))
        .ok_or_else(|| Error::Format("checkpoint has no generator".into()))?;
    ensure!(first.dims.len() == 3, Format, "generator input weight has dims {:?}", first.dims);
    let mut g = Generator::new(first.dims[0], 0)?;
    ck.restore_network(GENERATOR, g.network_mut())?;
    Ok(g)
}

/// Rebuilds the discriminator; the class count comes from the output layer.
pub fn load_discriminator<T: Real>(ck: &Checkpoint) -> Result<Discriminator<T>> {
    let prefix = format!("{DISCRIMINATOR}.");
    let head = ck
        .entries
        .iter()
        .filter(|e| e.name.starts_with(&prefix) && e.name.ends_with(".weight") && e.dims.len() == 2)
        .last()
        .ok_or_else(|| Error::Format("checkpoint has no discriminator".into()))?;
    ensure!(head.dims[0] >= 3, Format, "discriminator head has {} outputs", head.dims[0]);
    let mut d = Discriminator::new(head.dims[0] - 1, 0)?;
    ck.restore_network(DISCRIMINATOR, d.network_mut())?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;

    #[test]
    fn roundtrip_with_optimizer() {
        let g = Generator::<f32>::new(8, 1).unwrap();
        let d = Discriminator::<f32>::new(3, 2).unwrap();
        let mut opt = AdamState::new(AdamConfig::default(), &d.network().params());
        opt.step = (1 << 30) + 5;
        opt.first_moment[0][0] = 0.25;
        let ck = save_models(Some(&g), &d, Some((None, &opt))).unwrap();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"WLSG");
        assert_eq!(bytes[12], 1);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(load_generator::<f32>(&back).unwrap(), g);
        assert_eq!(load_discriminator::<f32>(&back).unwrap(), d);
        let mut opt2 = AdamState::new(AdamConfig::default(), &d.network().params());
        back.restore_adam(DISCRIMINATOR, &mut opt2).unwrap();
        assert_eq!(opt2.step, opt.step);
        assert_eq!(opt2.first_moment, opt.first_moment);
    }

    #[test]
    fn rejects_corruption() {
        let d = Discriminator::<f32>::new(3, 2).unwrap();
        let bytes = save_models(None, &d, None).unwrap().encode().unwrap();
        assert_eq!(bytes[12], 0);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&magic), Err(Error::Format(_))));
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert!(load_generator::<f32>(&ck).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut ck = Checkpoint::new();
        ck.push("generator.0.weight", &[4, 512, 4], vec![0.0; 4 * 512 * 4]).unwrap();
        let mut g = Generator::<f32>::new(5, 0).unwrap();
        assert!(ck.restore_network(GENERATOR, g.network_mut()).is_err());
        assert!(ck.push("x", &[2], vec![0.0]).is_err());
    }
}
