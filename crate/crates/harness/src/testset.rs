use std::io::{self, Write};

use metampc_core::plant::{EpisodeConfig, EpisodeSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::TestSetConfig;

/// Pre-drawn evaluation episodes, identified by the hash of their content.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    episodes: Vec<EpisodeSpec>,
    hash: String,
}

impl TestSet {
    pub fn build(config: &TestSetConfig, episodes: &EpisodeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::from_episodes((0..config.size).map(|_| EpisodeSpec::sample(episodes, &mut rng)).collect())
    }

    pub fn from_episodes(episodes: Vec<EpisodeSpec>) -> Self {
        let mut h = Sha256::new();
        for e in &episodes {
            for v in [e.initial.psi, e.initial.v, e.initial.phi, e.initial.omega] {
                h.update(v.to_le_bytes());
            }
            h.update((e.references.len() as u64).to_le_bytes());
            for r in &e.references {
                h.update(r.to_le_bytes());
            }
            h.update((e.reference_period as u64).to_le_bytes());
            h.update((e.horizon as u64).to_le_bytes());
            h.update(e.seed.to_le_bytes());
        }
        Self { hash: format!("{:x}", h.finalize()), episodes }
    }

    pub fn episodes(&self) -> &[EpisodeSpec] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// First `n` episodes as a new set.
    pub fn subset(&self, n: usize) -> Self {
        Self::from_episodes(self.episodes[..n.min(self.len())].to_vec())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# test_set_hash {}", self.hash)?;
        writeln!(w, "episode,psi,v,phi,omega,references,seed")?;
        for (i, e) in self.episodes.iter().enumerate() {
            let refs: Vec<String> = e.references.iter().map(|r| r.to_string()).collect();
            let x = e.initial;
            writeln!(w, "{i},{},{},{},{},{},{}", x.psi, x.v, x.phi, x.omega, refs.join(" "), e.seed)?;
        }
        Ok(())
    }
}
