//! Coalitions of feature indices and the sampler that chooses them.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest feature count a coalition bitmask can address.
pub const MAX_FEATURES: usize = 63;

/// A non-empty set of feature positions, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(u64);

impl Coalition {
    pub fn from_mask(mask: u64) -> Result<Self> {
        if mask == 0 {
            return Err(Error::EmptyCoalition);
        }
        Ok(Self(mask))
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = 0u64;
        for m in members {
            if m >= MAX_FEATURES {
                return Err(Error::Contract(format!("feature index {m} out of range")));
            }
            mask |= 1 << m;
        }
        Self::from_mask(mask)
    }

    /// All `m` features.
    pub fn full(m: usize) -> Self {
        debug_assert!((1..=MAX_FEATURES).contains(&m));
        Self(full_mask(m))
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, j: usize) -> bool {
        j < 64 && self.0 & (1 << j) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |j| self.0 & (1 << j) != 0)
    }

    /// Maps every member `j` to `map[j]`.
    pub fn remap(self, map: &[usize]) -> Result<Self> {
        Self::from_members(self.members().map(|j| map[j]))
    }

    /// True when every member indexes one of `m` features.
    pub fn fits(self, m: usize) -> bool {
        self.0 & !full_mask(m) == 0
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members()).finish()
    }
}

impl Serialize for Coalition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.members())
    }
}

impl<'de> Deserialize<'de> for Coalition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(d)?;
        Self::from_members(members).map_err(serde::de::Error::custom)
    }
}

fn full_mask(m: usize) -> u64 {
    if m >= 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

fn check_size(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Contract(format!(
            "attribution needs at least 2 features, got {m}"
        )));
    }
    if m > MAX_FEATURES {
        return Err(Error::Contract(format!(
            "at most {MAX_FEATURES} features are supported, got {m}"
        )));
    }
    Ok(())
}

/// The `m` leave-one-out coalitions; the `j`-th omits only feature `j`.
pub fn essential_coalitions(m: usize) -> Result<Vec<Coalition>> {
    check_size(m)?;
    let full = full_mask(m);
    Ok((0..m).map(|j| Coalition(full & !(1 << j))).collect())
}

/// Number of extra coalitions drawn beyond the leave-one-out set.
///
/// `floor(((2^m - 1) - m) * ratio)`, capped at `max(0, max_coalitions - m)`.
pub fn extra_count(m: usize, ratio: f64, max_coalitions: usize) -> usize {
    let pool = ((1u128 << m) - 1).saturating_sub(m as u128);
    let scaled = (pool as f64 * ratio).floor();
    let cap = max_coalitions.saturating_sub(m);
    if scaled >= cap as f64 {
        cap
    } else {
        scaled as usize
    }
}

/// Draws extra distinct non-empty coalitions uniformly without replacement.
///
/// Members of `essential` are never returned. The full coalition may be.
/// Small powersets are enumerated and shuffled; large ones use rejection
/// sampling of independent fair-coin memberships.
pub fn sample_extra(
    m: usize,
    ratio: f64,
    max_coalitions: usize,
    seed: u64,
    essential: &[Coalition],
) -> Result<Vec<Coalition>> {
    check_size(m)?;
    let want = extra_count(m, ratio, max_coalitions);
    let excluded: HashSet<u64> = essential.iter().map(|c| c.0).collect();
    let full = full_mask(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powerset = full as u128;

    let available = powerset.saturating_sub(excluded.len() as u128);
    if (want as u128) > available {
        return Err(Error::Contract(format!(
            "cannot draw {want} coalitions from {available} candidates"
        )));
    }

    if powerset <= 4 * max_coalitions as u128 {
        let mut pool: Vec<u64> = (1..=full).filter(|c| !excluded.contains(c)).collect();
        pool.shuffle(&mut rng);
        pool.truncate(want);
        return Ok(pool.into_iter().map(Coalition).collect());
    }

    let mut chosen = HashSet::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let mask = rng.gen::<u64>() & full;
        if mask == 0 || excluded.contains(&mask) || !chosen.insert(mask) {
            continue;
        }
        out.push(Coalition(mask));
    }
    Ok(out)
}
