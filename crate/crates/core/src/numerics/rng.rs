// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`, so a stream can be
//! reconstructed from its two words and child streams derived from a label
//! never depend on how many draws their siblings made.

#[inline]
fn mix64(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { key: mix64(seed ^ GOLDEN), counter: 0 }
    }

    /// Rebuild a stream from a saved `(key, counter)` pair.
    pub fn from_state(key: u64, counter: u64) -> Self {
        Rng { key, counter }
    }

    pub fn state(&self) -> (u64, u64) {
        (self.key, self.counter)
    }

    /// Independent stream keyed by `label`.
    pub fn child(&self, label: u64) -> Rng {
        Rng {
            key: mix64(self.key ^ mix64(label.wrapping_add(GOLDEN).wrapping_mul(0xd6e8_feb8_6659_fd93))),
            counter: 0,
        }
    }

    /// Stream keyed by a path of labels, e.g. `(step, image, sample)`.
    pub fn child_path(&self, labels: &[u64]) -> Rng {
        labels.iter().fold(*self, |r, &l| r.child(l))
    }

    /// Stream keyed by a string label (FNV-1a).
    pub fn child_named(&self, label: &str) -> Rng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(mix64(self.counter.wrapping_mul(GOLDEN))));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (`n > 0`), Lemire's multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller (one value per two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Rng::new(7).next_u64(), Rng::new(8).next_u64());
    }

    #[test]
    fn children_ignore_parent_consumption() {
        let root = Rng::new(1);
        let mut used = root;
        for _ in 0..17 {
            used.next_u64();
        }
        // children are keyed by label, not by parent counter
        assert_eq!(root.child(3).next_u64(), used.child(3).next_u64());
        assert_ne!(root.child(3).next_u64(), root.child(4).next_u64());
        assert_eq!(root.child_path(&[1, 2, 3]), root.child(1).child(2).child(3));
    }

    #[test]
    fn state_round_trip() {
        let mut a = Rng::new(99);
        a.next_u64();
        let (k, c) = a.state();
        let mut b = Rng::from_state(k, c);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut r = Rng::new(5);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = r.normal();
            s += x;
            s2 += x * x;
        }
        let m = s / n as f64;
        assert!(m.abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
        let u: f64 = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
        assert!((u - 0.5).abs() < 0.005);
    }

    #[test]
    fn choose_distinct_is_distinct() {
        let mut r = Rng::new(2);
        let mut v = r.choose_distinct(10, 6);
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), 6);
        assert!(v.iter().all(|&i| i < 10));
    }
}
