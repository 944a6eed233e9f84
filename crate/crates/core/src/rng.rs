//! Seed hierarchy. Every random stream in a run is derived from one root
//! seed plus a component name, so adding a consumer never perturbs the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for a named component.
    pub fn seed(&self, component: &str) -> u64 {
        splitmix64(self.root ^ fnv1a(component.as_bytes()))
    }

    /// Seed for a named component at a given index (task, epoch, ...).
    pub fn seed_at(&self, component: &str, index: u64) -> u64 {
        splitmix64(self.seed(component) ^ splitmix64(index))
    }

    pub fn child(&self, component: &str) -> SeedTree {
        SeedTree::new(self.seed(component))
    }

    pub fn rng(&self, component: &str) -> Rng {
        Rng::seed_from_u64(self.seed(component))
    }

    pub fn rng_at(&self, component: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed_at(component, index))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn components_get_distinct_streams() {
        let t = SeedTree::new(7);
        assert_ne!(t.seed("init"), t.seed("data"));
        assert_ne!(t.seed_at("task", 1), t.seed_at("task", 2));
        let a: u64 = t.rng("init").random();
        let b: u64 = t.rng("init").random();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_are_stable() {
        // frozen: changing the derivation silently breaks run reproducibility
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(SeedTree::new(0).seed(""), splitmix64(0xcbf2_9ce4_8422_2325));
    }
}
