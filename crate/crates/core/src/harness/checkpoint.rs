//! Checkpoint files: a `GCTM-CKPT v1` header line, `key=value` metadata, a
//! blank line, then the weights and the EMA weights as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{GctmError, Result};
use crate::nn::{ParamStore, TimeEmbedding};
use crate::schedule::ScheduleParams;

pub const MAGIC: &str = "GCTM-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub schedule: ScheduleParams,
    /// Grid size in use when the checkpoint was written.
    pub grid_n: usize,
    pub coupling: String,
    pub seed: u64,
    pub iter: usize,
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let emb = p.embedding();
        let mut out = Vec::new();
        let header = [
            ("layer_dims", join(p.layer_dims())),
            ("num_frequencies", emb.num_frequencies.to_string()),
            ("freq_scale", emb.scale.to_string()),
            ("ema_decay", p.ema_decay.to_string()),
            ("sigma_min", self.schedule.sigma_min.to_string()),
            ("sigma_max", self.schedule.sigma_max.to_string()),
            ("rho", self.schedule.rho.to_string()),
            ("grid_n", self.grid_n.to_string()),
            ("coupling", self.coupling.clone()),
            ("seed", self.seed.to_string()),
            ("iter", self.iter.to_string()),
            ("weights_len", p.weights.len().to_string()),
            ("ema_len", p.ema_weights.len().to_string()),
        ];
        writeln!(out, "{MAGIC}").unwrap();
        for (k, v) in header {
            writeln!(out, "{k}={v}").unwrap();
        }
        out.push(b'\n');
        for w in p.weights.iter().chain(&p.ema_weights) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GctmError::Parse(format!("checkpoint: {m}"));
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("missing header terminator"))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a GCTM-CKPT v1 file"));
        }
        let mut kv = BTreeMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("malformed line '{line}'")))?;
            kv.insert(k, v);
        }
        let field = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| bad(&format!("missing '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| GctmError::Parse(format!("checkpoint: bad value for '{k}': '{v}'")))
        }
        let layer_dims = field("layer_dims")?
            .split(',')
            .map(|v| num::<usize>("layer_dims", v))
            .collect::<Result<Vec<_>>>()?;
        let embedding = TimeEmbedding {
            num_frequencies: num("num_frequencies", field("num_frequencies")?)?,
            scale: num("freq_scale", field("freq_scale")?)?,
        };
        let weights_len: usize = num("weights_len", field("weights_len")?)?;
        let ema_len: usize = num("ema_len", field("ema_len")?)?;
        let body = &bytes[split + 2..];
        if body.len() != 4 * (weights_len + ema_len) {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                4 * (weights_len + ema_len),
                body.len()
            )));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let (w, e) = floats.split_at(weights_len);
        let params = ParamStore::from_parts(
            layer_dims,
            embedding,
            w.to_vec(),
            e.to_vec(),
            num("ema_decay", field("ema_decay")?)?,
        )?;
        let schedule = ScheduleParams {
            sigma_min: num("sigma_min", field("sigma_min")?)?,
            sigma_max: num("sigma_max", field("sigma_max")?)?,
            rho: num("rho", field("rho")?)?,
        };
        schedule.validate()?;
        Ok(Checkpoint {
            params,
            schedule,
            grid_n: num("grid_n", field("grid_n")?)?,
            coupling: field("coupling")?.to_string(),
            seed: num("seed", field("seed")?)?,
            iter: num("iter", field("iter")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let mut p =
            ParamStore::init(2, &[8, 8], TimeEmbedding::default(), &mut rng::seeded(1)).unwrap();
        p.ema_weights[0] = 0.25;
        Checkpoint {
            params: p,
            schedule: ScheduleParams::default(),
            grid_n: 32,
            coupling: "independent".into(),
            seed: 9,
            iter: 100,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        assert!(bytes.starts_with(b"GCTM-CKPT v1\n"));
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"GCTM-CKPT v2\n\n").is_err());
        let text = String::from_utf8_lossy(&bytes[..40]).replace("layer_dims=", "layer_dims=x");
        assert!(Checkpoint::from_bytes(text.as_bytes()).is_err());
    }
}
