//! Binary checkpoints: named blocks of little-endian `f64`.
//!
//! Layout: magic `ERSACKPT`, format version (`u32`), section count (`u32`),
//! then per section a `u32` name length, the UTF-8 name, a `u64` value
//! count and the values. Integers stored as `f64` are exact below 2^53.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::agent::Agent;
use crate::approx::BLOCK_NAMES;
use crate::replay::{ReplayBuffer, ReplayError, ReplayItem};

pub const MAGIC: &[u8; 8] = b"ERSACKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("section name is not UTF-8")]
    BadName,
    #[error("missing section {0:?}")]
    MissingSection(String),
    #[error("section {section:?} has {got} values, expected {expected}")]
    Shape { section: String, expected: usize, got: usize },
    #[error("frozen prior networks differ from the checkpoint")]
    PriorMismatch,
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a section.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let name = name.into();
        match self.sections.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = values,
            None => self.sections.push((name, values)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&[f64], CheckpointError> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| CheckpointError::MissingSection(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    fn get_sized(&self, name: &str, expected: usize) -> Result<&[f64], CheckpointError> {
        let v = self.get(name)?;
        if v.len() != expected {
            return Err(CheckpointError::Shape {
                section: name.to_string(),
                expected,
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, values) in &self.sections {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let n = read_u32(&mut r)?;
        let mut ck = Checkpoint::new();
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
            let mut count = [0u8; 8];
            r.read_exact(&mut count)?;
            let count = u64::from_le_bytes(count) as usize;
            let mut values = Vec::with_capacity(count.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            ck.insert(name, values);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Network parameters, optimizer moments, temperature, counters and visit
/// counts of `agent`.
pub fn save_agent(agent: &Agent, ck: &mut Checkpoint) {
    for (name, block) in BLOCK_NAMES.iter().zip(agent.net().blocks()) {
        ck.insert(format!("net/{name}"), block.to_vec());
    }
    let (m, v) = agent.optimizer().state();
    for (i, name) in BLOCK_NAMES.iter().enumerate() {
        if let (Some(mi), Some(vi)) = (m.get(i), v.get(i)) {
            ck.insert(format!("optim/m/{name}"), mi.clone());
            ck.insert(format!("optim/v/{name}"), vi.clone());
        }
    }
    let priors: Vec<f64> = agent.net().ensemble().priors().iter().flat_map(|p| p.params().iter().copied()).collect();
    ck.insert("net/priors", priors);
    ck.insert(
        "agent/scalars",
        vec![
            agent.tau(),
            agent.optimizer().steps_taken() as f64,
            agent.updates() as f64,
            agent.rejected_updates() as f64,
        ],
    );
    if let Some(c) = agent.counts() {
        ck.insert("agent/visit_counts", c.counts().tables().iter().flatten().map(|&n| n as f64).collect());
    }
}

/// Restores state written by [`save_agent`] into an agent built with the
/// same configuration and seed.
pub fn restore_agent(agent: &mut Agent, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let priors: Vec<f64> = agent.net().ensemble().priors().iter().flat_map(|p| p.params().iter().copied()).collect();
    if ck.get_sized("net/priors", priors.len())? != priors.as_slice() {
        return Err(CheckpointError::PriorMismatch);
    }
    let sizes: Vec<usize> = agent.net().blocks().iter().map(|b| b.len()).collect();
    let mut blocks = Vec::with_capacity(sizes.len());
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (name, &n) in BLOCK_NAMES.iter().zip(&sizes) {
        blocks.push(ck.get_sized(&format!("net/{name}"), n)?.to_vec());
        let key_m = format!("optim/m/{name}");
        if ck.contains(&key_m) {
            m.push(ck.get_sized(&key_m, n)?.to_vec());
            v.push(ck.get_sized(&format!("optim/v/{name}"), n)?.to_vec());
        }
    }
    let scalars = ck.get_sized("agent/scalars", 4)?;
    let counts = match agent.counts() {
        Some(c) => {
            let total: usize = c.counts().tables().iter().map(|t| t.len()).sum();
            Some(ck.get_sized("agent/visit_counts", total)?.to_vec())
        }
        None => None,
    };
    for (dst, src) in agent.net_mut().blocks_mut().into_iter().zip(blocks) {
        *dst = src;
    }
    if m.len() == sizes.len() {
        agent.optimizer_mut().restore_state(scalars[1] as u64, m, v);
    }
    agent.set_tau(scalars[0]);
    agent.set_counters(scalars[2] as u64, scalars[3] as u64);
    if let (Some(c), Some(flat)) = (agent.counts_mut(), counts) {
        let mut it = flat.into_iter();
        for n in c.counts_mut().tables_mut().iter_mut().flatten() {
            *n = it.next().unwrap_or(0.0) as u64;
        }
    }
    Ok(())
}

const ITEM_FIELDS: usize = 9;

/// Buffer contents including priorities and stored noise.
pub fn save_buffer(buf: &ReplayBuffer, ck: &mut Checkpoint) {
    let k = buf.items().first().map_or(0, |i| i.target_noise.len());
    ck.insert(
        "replay/meta",
        vec![buf.capacity() as f64, buf.alpha(), buf.cursor() as f64, k as f64, buf.len() as f64],
    );
    let mut flat = Vec::with_capacity(buf.len() * (ITEM_FIELDS + k));
    for it in buf.items() {
        flat.extend_from_slice(&[
            it.layer as f64,
            it.state as f64,
            it.action as f64,
            it.reward,
            it.behavior_prob,
            it.episode as f64,
            it.step as f64,
            if it.terminal { 1.0 } else { 0.0 },
            it.priority,
        ]);
        flat.extend_from_slice(&it.target_noise);
    }
    ck.insert("replay/items", flat);
}

pub fn restore_buffer(ck: &Checkpoint) -> Result<ReplayBuffer, CheckpointError> {
    let meta = ck.get_sized("replay/meta", 5)?;
    let (capacity, alpha, cursor, k, len) = (meta[0] as usize, meta[1], meta[2] as usize, meta[3] as usize, meta[4] as usize);
    let stride = ITEM_FIELDS + k;
    let flat = ck.get_sized("replay/items", len * stride)?;
    let items = flat
        .chunks_exact(stride.max(1))
        .take(len)
        .map(|c| ReplayItem {
            layer: c[0] as usize,
            state: c[1] as usize,
            action: c[2] as usize,
            reward: c[3],
            behavior_prob: c[4],
            episode: c[5] as u64,
            step: c[6] as usize,
            terminal: c[7] != 0.0,
            priority: c[8],
            target_noise: c[ITEM_FIELDS..].to_vec(),
        })
        .collect();
    Ok(ReplayBuffer::from_parts(capacity, alpha, items, cursor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{env_rng, Backend, ErsacConfig};
    use crate::mdp::{build_deep_sea, DeepSeaSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn train(agent: &mut Agent, mdp: &crate::mdp::TabularMdp, rng: &mut ChaCha8Rng, episodes: usize) {
        for _ in 0..episodes {
            agent.run_episode(mdp, rng, |a, seg, _| a.step(&seg).map(|_| ())).unwrap();
        }
    }

    #[test]
    fn bytes_round_trip() {
        let mut ck = Checkpoint::new();
        ck.insert("a", vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]);
        ck.insert("empty", vec![]);
        ck.insert("a", vec![2.5]);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("a").unwrap(), &[2.5]);
        assert_eq!(back.names().collect::<Vec<_>>(), ["a", "empty"]);
    }

    #[test]
    fn corrupt_headers_rejected() {
        assert!(matches!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&7u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(bytes.as_slice()), Err(CheckpointError::UnsupportedVersion(7))));
        let mut ck = Checkpoint::new();
        ck.insert("x", vec![1.0; 4]);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::read_from(bytes.as_slice()), Err(CheckpointError::Io(_))));
    }

    #[test]
    fn restored_agent_continues_identically() {
        let ds = build_deep_sea(&DeepSeaSpec::new(5));
        for backend in [Backend::Ensemble, Backend::Counts { sigma: 1.0, pseudo_count: 1.0 }] {
            let cfg = ErsacConfig {
                backend,
                ..Default::default()
            };
            let mut a = Agent::new(ds.mdp(), cfg.clone(), 4).unwrap();
            let mut rng = env_rng(4);
            train(&mut a, ds.mdp(), &mut rng, 30);
            let mut ck = Checkpoint::new();
            save_agent(&a, &mut ck);
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let mut b = Agent::new(ds.mdp(), cfg, 4).unwrap();
            restore_agent(&mut b, &Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
            assert_eq!(b.updates(), a.updates());
            let mut rng_b = rng.clone();
            train(&mut a, ds.mdp(), &mut rng, 20);
            train(&mut b, ds.mdp(), &mut rng_b, 20);
            assert_eq!(a.net().flat_params(), b.net().flat_params());
            assert_eq!(a.tau().to_bits(), b.tau().to_bits());
            assert_eq!(a.counts(), b.counts());
        }
    }

    #[test]
    fn different_prior_seed_rejected() {
        let ds = build_deep_sea(&DeepSeaSpec::new(4));
        let a = Agent::new(ds.mdp(), ErsacConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::new();
        save_agent(&a, &mut ck);
        let mut b = Agent::new(ds.mdp(), ErsacConfig::default(), 2).unwrap();
        assert!(matches!(restore_agent(&mut b, &ck), Err(CheckpointError::PriorMismatch)));
    }

    #[test]
    fn buffer_round_trip_preserves_sampling() {
        let ds = build_deep_sea(&DeepSeaSpec::new(4));
        let mut agent = Agent::new(ds.mdp(), ErsacConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut buf = ReplayBuffer::new(13, 1.0);
        for ep in 0..6u64 {
            agent
                .run_episode(ds.mdp(), &mut rng, |_, seg, rng| {
                    let last = seg.steps.len() - 1;
                    for (i, st) in seg.steps.iter().enumerate() {
                        buf.push(st, ep, i == last, 3, 0.1, rng);
                    }
                    Ok(())
                })
                .unwrap();
        }
        buf.update_priorities(&[0, 5], &[3.0, 0.2]).unwrap();
        let mut ck = Checkpoint::new();
        save_buffer(&buf, &mut ck);
        let back = restore_buffer(&ck).unwrap();
        assert_eq!(back.items(), buf.items());
        assert_eq!(back.cursor(), buf.cursor());
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(1));
        for i in 0..buf.len() {
            assert_eq!(back.probability(i), buf.probability(i));
        }
        let s1: Vec<_> = buf.sample(4, 3, &mut r1).segments.into_iter().map(|s| s.indices).collect();
        let s2: Vec<_> = back.sample(4, 3, &mut r2).segments.into_iter().map(|s| s.indices).collect();
        assert_eq!(s1, s2);
    }
}
