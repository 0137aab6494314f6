//! Binary checkpoint format for [`TrainState`].
//!
//! ```text
//! "A2VC" | u32 version | u32 len | len bytes of UTF-8 `key=value` lines
//! u64 epoch | f64 running_loss
//! u32 d | d × f64 mean | d × f64 std
//! u64 n | n × f32/f64 parameters (precision from the config block)
//! 32-byte rng seed | u64 rng stream | u128 rng word position
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::corpus::NormalizationStats;
use crate::error::{Error, Result};
use crate::nn::{Architecture, ModelParams};
use crate::real::{Precision, Real};
use crate::trainer::{TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"A2VC";
const VERSION: u32 = 1;

/// A loaded checkpoint in whichever precision it was saved with.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    F32(TrainState<f32>),
    F64(TrainState<f64>),
}

impl Checkpoint {
    pub fn precision(&self) -> Precision {
        match self {
            Checkpoint::F32(_) => Precision::F32,
            Checkpoint::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            Checkpoint::F32(s) => &s.config,
            Checkpoint::F64(s) => &s.config,
        }
    }

    /// The state in precision `T`, converting (and logging) when it differs.
    pub fn into_state<T: Real>(self) -> TrainState<T> {
        match self {
            Checkpoint::F32(s) => s.cast(),
            Checkpoint::F64(s) => s.cast(),
        }
    }
}

pub fn encode_checkpoint<T: Real>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let arch = state.params.architecture();
    let mut block = String::new();
    for (k, v) in state.config.to_pairs() {
        let v = if k == "precision" { T::PRECISION.to_string() } else { v };
        block.push_str(&format!("{k}={v}\n"));
    }
    block.push_str(&format!("feature_dim={}\n", arch.feature_dim));
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());

    out.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    out.extend_from_slice(&state.running_loss.to_le_bytes());

    let norm = &state.normalization;
    out.extend_from_slice(&(norm.dim() as u32).to_le_bytes());
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    out.extend_from_slice(&(state.params.len() as u64).to_le_bytes());
    for &p in state.params.flat() {
        p.write_le(&mut out);
    }

    out.extend_from_slice(&state.rng.get_seed());
    out.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "checkpoint truncated while reading {what} (offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn decode_state<T: Real>(
    cur: &mut Cursor<'_>,
    config: TrainConfig,
    feature_dim: usize,
) -> Result<TrainState<T>> {
    let epoch = cur.u64("epoch")? as usize;
    let running_loss = cur.f64("running loss")?;
    let d = cur.u32("normalization size")? as usize;
    let mut stats = Vec::with_capacity(2 * d);
    for _ in 0..2 * d {
        stats.push(cur.f64("normalization stats")?);
    }
    let std = stats.split_off(d);
    let normalization = NormalizationStats { mean: stats, std };

    let arch: Architecture = config.architecture(feature_dim);
    let count = cur.u64("parameter count")? as usize;
    if count != arch.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, its config implies {}",
            arch.param_count()
        )));
    }
    let width = T::PRECISION.byte_width();
    let raw = cur.take(count * width, "parameters")?;
    let flat = raw.chunks_exact(width).map(T::read_le).collect();
    let params = ModelParams::from_flat(arch, flat)?;

    let seed: [u8; 32] = cur.take(32, "rng seed")?.try_into().expect("32 bytes");
    let stream = cur.u64("rng stream")?;
    let word_pos = u128::from_le_bytes(cur.take(16, "rng position")?.try_into().expect("16 bytes"));
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        params,
        normalization,
        epoch,
        running_loss,
        rng,
        config,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic").map_err(|_| Error::Format("file too short for a checkpoint".into()))? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let len = cur.u32("config length")? as usize;
    let block = std::str::from_utf8(cur.take(len, "config block")?)
        .map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
    let mut config = TrainConfig::default();
    let mut feature_dim = None;
    for line in block.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Corrupt(format!("config line `{line}` has no `=`")))?;
        if k == "feature_dim" {
            feature_dim = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Corrupt(format!("bad feature_dim `{v}`")))?,
            );
        } else {
            config.set(k, v)?;
        }
    }
    let feature_dim = feature_dim.ok_or_else(|| Error::Corrupt("config lacks feature_dim".into()))?;
    let ckpt = match config.precision {
        Precision::F32 => Checkpoint::F32(decode_state(&mut cur, config, feature_dim)?),
        Precision::F64 => Checkpoint::F64(decode_state(&mut cur, config, feature_dim)?),
    };
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - cur.pos
        )));
    }
    Ok(ckpt)
}

/// Write atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint<T: Real>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let bytes = encode_checkpoint(state);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(&tmp, e))?;
    f.sync_all().map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::encode;
    use crate::sequence::FeatureSequence;
    use rand::Rng;

    fn state<T: Real>() -> TrainState<T> {
        let cfg = TrainConfig {
            hidden: 4,
            encoder_layers: 2,
            seed: 17,
            precision: T::PRECISION,
            ..TrainConfig::default()
        };
        let norm = NormalizationStats { mean: vec![0.5, -1.0], std: vec![2.0, 0.25] };
        let mut s = TrainState::<T>::initial(cfg, 2, norm).unwrap();
        s.epoch = 3;
        s.running_loss = 0.75;
        let _: u64 = s.rng.random();
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = state::<f64>();
        let back = match decode_checkpoint(&encode_checkpoint(&s)).unwrap() {
            Checkpoint::F64(b) => b,
            other => panic!("wrong precision {:?}", other.precision()),
        };
        assert_eq!(back.params, s.params);
        assert_eq!(back.normalization, s.normalization);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.running_loss, 0.75);
        assert_eq!(back.rng, s.rng);
        assert_eq!(back.config, s.config);

        let x = FeatureSequence::new(vec![0.1, 0.2, 0.3, -0.4], 2).unwrap();
        assert_eq!(encode(&s.params, &x).unwrap(), encode(&back.params, &x).unwrap());
    }

    #[test]
    fn f32_round_trip_and_conversion() {
        let s = state::<f32>();
        let ck = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(ck.precision(), Precision::F32);
        let back: TrainState<f32> = ck.into_state();
        assert_eq!(back.params, s.params);

        let wide = state::<f64>();
        let narrowed: TrainState<f32> = decode_checkpoint(&encode_checkpoint(&wide)).unwrap().into_state();
        assert_eq!(narrowed.config.precision, Precision::F32);
        for (a, b) in narrowed.params.flat().iter().zip(wide.params.flat()) {
            assert_eq!(*a, *b as f32);
        }
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let bytes = encode_checkpoint(&state::<f64>());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Corrupt(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2vc");
        let s = state::<f64>();
        save_checkpoint(&s, &path).unwrap();
        let back: TrainState<f64> = load_checkpoint(&path).unwrap().into_state();
        assert_eq!(back.params, s.params);
        assert!(load_checkpoint(dir.path().join("missing")).is_err());
    }
}
