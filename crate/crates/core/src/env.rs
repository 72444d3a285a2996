//! The environment surface the learners consume.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Canonical, fixed-width tabular key for a joint state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StateKey(pub [u8; 32]);

impl StateKey {
    /// Packs bytes into a key; fails when more than 32 bytes are supplied.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() > 32 {
            return Err(Error::Capacity(format!("state key needs {} bytes, limit is 32", bytes.len())));
        }
        let mut key = [0u8; 32];
        key[..bytes.len()].copy_from_slice(bytes);
        Ok(Self(key))
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl serde::Serialize for StateKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for StateKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return Err(Error::Domain(format!("malformed state key {s:?}")));
        }
        let mut key = [0u8; 32];
        for (i, byte) in key.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Domain(format!("malformed state key {s:?}")))?;
        }
        Ok(Self(key))
    }
}

/// Result of one joint step.
#[derive(Debug, Clone)]
pub struct Transition<S> {
    pub next: S,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Jain's index of the updated workload.
    pub fairness: f64,
}

/// A finite cooperative Markov game with per-agent workload counters.
///
/// Actions are per-agent indices in `0..n_actions()`.
pub trait MultiAgentEnv {
    type State: Clone;

    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn noop_action(&self) -> usize;
    fn reset(&self, seed: u64) -> Self::State;
    fn step(&self, state: &Self::State, actions: &[usize]) -> Result<Transition<Self::State>>;
    fn state_key(&self, state: &Self::State) -> StateKey;
    fn workload<'a>(&self, state: &'a Self::State) -> &'a [u32];
    fn potential(&self, state: &Self::State) -> u32;
    fn max_potential(&self) -> u32;
    fn action_label(&self, action: usize) -> &'static str;
    fn position_labels(&self, state: &Self::State) -> Vec<String>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_hex_round_trip() {
        let key = StateKey::from_bytes(&[1, 2, 250, 0, 17]).unwrap();
        let text = key.to_string();
        assert_eq!(text.len(), 64);
        assert_eq!(text.parse::<StateKey>().unwrap(), key);
        assert!(StateKey::from_bytes(&[0; 33]).is_err());
        assert!("zz".parse::<StateKey>().is_err());
    }
}
