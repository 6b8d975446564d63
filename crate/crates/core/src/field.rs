//! Arithmetic modulo a runtime prime below 2^63.

use rand::RngCore;

/// The Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Integers modulo a prime `p < 2^63`. Elements are plain `u64` residues in `[0, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    p: u64,
}

impl PrimeField {
    /// Returns `None` unless `p` is prime and below 2^63.
    pub fn new(p: u64) -> Option<Self> {
        (p < (1 << 63) && is_prime(p)).then_some(Self { p })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        x % self.p
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.p as u128) as u64
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.p;
        base %= self.p;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = a % self.p;
        (a != 0).then(|| self.pow(a, self.p - 2))
    }

    /// Maps a signed integer to its residue.
    pub fn from_i64(&self, v: i64) -> u64 {
        let r = (v as i128).rem_euclid(self.p as i128);
        r as u64
    }

    /// Centered lift: residues above `p / 2` become negative.
    pub fn centered(&self, r: u64) -> i64 {
        if r > self.p / 2 {
            -((self.p - r) as i64)
        } else {
            r as i64
        }
    }

    /// Uniform element by rejection sampling on the smallest covering bit mask.
    pub fn sample(&self, rng: &mut impl RngCore) -> u64 {
        let bits = 64 - (self.p - 1).leading_zeros();
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let v = rng.next_u64() & mask;
            if v < self.p {
                return v;
            }
        }
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &w in &WITNESSES {
        if n.is_multiple_of(w) {
            return n == w;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn primality() {
        assert!(is_prime(MERSENNE_61));
        assert!(is_prime(97));
        assert!(is_prime(2));
        assert!(!is_prime(1));
        assert!(!is_prime((1 << 61) + 1));
        assert!(!is_prime(561)); // Carmichael
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to 2,3,5,7
        let small: Vec<u64> = (0..50).filter(|&n| is_prime(n)).collect();
        assert_eq!(small, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]);
    }

    #[test]
    fn rejects_composite_modulus() {
        assert!(PrimeField::new(100).is_none());
        assert!(PrimeField::new(97).is_some());
    }

    #[test]
    fn arithmetic_matches_i128() {
        let f = PrimeField::new(MERSENNE_61).unwrap();
        let mut rng = seeded_rng(1, "field");
        for _ in 0..1000 {
            let a = f.sample(&mut rng);
            let b = f.sample(&mut rng);
            let p = MERSENNE_61 as i128;
            assert_eq!(f.add(a, b) as i128, (a as i128 + b as i128) % p);
            assert_eq!(f.sub(a, b) as i128, (a as i128 - b as i128).rem_euclid(p));
            assert_eq!(f.mul(a, b) as i128, (a as i128 * b as i128) % p);
            if a != 0 {
                assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            }
            assert_eq!(f.add(a, f.neg(a)), 0);
        }
        assert_eq!(f.inv(0), None);
    }

    #[test]
    fn signed_lift_round_trips() {
        let f = PrimeField::new(MERSENNE_61).unwrap();
        for v in [-65536i64, -1, 0, 1, 1 << 40, -(1 << 59)] {
            assert_eq!(f.centered(f.from_i64(v)), v);
        }
        assert_eq!(f.from_i64(-65536), MERSENNE_61 - 65536);
    }

    #[test]
    fn sample_stays_below_small_modulus() {
        let f = PrimeField::new(97).unwrap();
        let mut rng = seeded_rng(2, "small");
        let mut seen = [false; 97];
        for _ in 0..20_000 {
            let v = f.sample(&mut rng);
            assert!(v < 97);
            seen[v as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
