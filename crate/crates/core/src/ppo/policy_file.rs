//! Binary policy checkpoint: `agent_<id>.policy`.
//!
//! Layout, all integers u32 and all reals f64, little-endian:
//! magic, version, obs_dim, action_dim, layer count L, L+1 policy layer
//! sizes, L+1 value layer sizes, policy params, log-std, value params,
//! norm count, norm means, norm variances.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::PolicyParams;
use crate::nn::{param_count, Mlp, RunningNorm};

pub const POLICY_MAGIC: [u8; 4] = *b"EVLP";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error("policy file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a policy file (bad magic)")]
    BadMagic,
    #[error("unsupported policy file version {0}")]
    Version(u32),
    #[error("policy file truncated")]
    Truncated,
    #[error("policy file inconsistent: {0}")]
    Inconsistent(&'static str),
}

pub fn encode_policy(params: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&POLICY_MAGIC);
    u32le(&mut out, POLICY_VERSION as usize);
    u32le(&mut out, params.obs_dim());
    u32le(&mut out, params.action_dim());
    u32le(&mut out, params.policy.sizes().len());
    for &s in params.policy.sizes() {
        u32le(&mut out, s);
    }
    u32le(&mut out, params.value.sizes().len());
    for &s in params.value.sizes() {
        u32le(&mut out, s);
    }
    let reals = params
        .policy
        .params()
        .iter()
        .chain(&params.log_std)
        .chain(params.value.params())
        .chain(std::iter::once(&params.obs_norm.count))
        .chain(&params.obs_norm.mean)
        .chain(&params.obs_norm.var);
    for v in reals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], PolicyFileError> {
        if self.buf.len() < n {
            return Err(PolicyFileError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, PolicyFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, PolicyFileError> {
        let bytes = self.take(n.checked_mul(8).ok_or(PolicyFileError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn sizes(&mut self) -> Result<Vec<usize>, PolicyFileError> {
        let n = self.u32()?;
        if !(2..=64).contains(&n) {
            return Err(PolicyFileError::Inconsistent("layer count"));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode_policy(bytes: &[u8]) -> Result<PolicyParams, PolicyFileError> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != POLICY_MAGIC {
        return Err(PolicyFileError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != POLICY_VERSION {
        return Err(PolicyFileError::Version(version));
    }
    let obs_dim = r.u32()?;
    let action_dim = r.u32()?;
    let psizes = r.sizes()?;
    let vsizes = r.sizes()?;
    if psizes[0] != obs_dim || vsizes[0] != obs_dim || psizes.last() != Some(&action_dim) || vsizes.last() != Some(&1)
    {
        return Err(PolicyFileError::Inconsistent("layer sizes"));
    }
    let policy = Mlp::from_params(&psizes, r.f64s(param_count(&psizes))?).ok_or(PolicyFileError::Inconsistent("policy"))?;
    let log_std = r.f64s(action_dim)?;
    let value = Mlp::from_params(&vsizes, r.f64s(param_count(&vsizes))?).ok_or(PolicyFileError::Inconsistent("value"))?;
    let count = r.f64s(1)?[0];
    let mean = r.f64s(obs_dim)?;
    let var = r.f64s(obs_dim)?;
    if !r.buf.is_empty() {
        return Err(PolicyFileError::Inconsistent("trailing bytes"));
    }
    Ok(PolicyParams { policy, log_std, value, obs_norm: RunningNorm { mean, var, count } })
}

pub fn write_policy(path: &Path, params: &PolicyParams) -> Result<(), PolicyFileError> {
    let tmp = path.with_extension("policy.tmp");
    fs::write(&tmp, encode_policy(params))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<PolicyParams, PolicyFileError> {
    decode_policy(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PpoConfig;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rng_from_seed(3);
        let mut p = PolicyParams::new(13, 2, &PpoConfig::default(), &mut rng);
        p.obs_norm.update(&[vec![0.5; 13], vec![-1.25; 13]]);
        let bytes = encode_policy(&p);
        assert_eq!(decode_policy(&bytes).unwrap(), p);
        assert!(matches!(decode_policy(&bytes[..bytes.len() - 1]), Err(PolicyFileError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_policy(&bad), Err(PolicyFileError::BadMagic)));
    }
}
