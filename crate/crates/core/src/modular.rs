//! Prime-field arithmetic over `u64` residues.

use crate::error::{Error, Result};

/// The default modulus, the Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[inline]
pub fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    let (s, overflow) = a.overflowing_add(b);
    if overflow || s >= p {
        s.wrapping_sub(p)
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a.wrapping_sub(b).wrapping_add(p)
    }
}

/// `a * b mod p` through a 128-bit product; never overflows.
#[inline]
pub fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    debug_assert!(a < p && b < p);
    let x = a as u128 * b as u128;
    if p == MERSENNE_61 {
        // a, b < p so x < 2^122
        let folded = (x & MERSENNE_61 as u128) as u64 + (x >> 61) as u64;
        let r = (folded & MERSENNE_61) + (folded >> 61);
        if r >= MERSENNE_61 {
            r - MERSENNE_61
        } else {
            r
        }
    } else {
        (x % p as u128) as u64
    }
}

/// Reduces a signed integer into `[0, p)`.
#[inline]
pub fn reduce_signed(n: i64, p: u64) -> u64 {
    let r = (n as i128).rem_euclid(p as i128);
    r as u64
}

/// Square-and-multiply exponentiation.
pub fn pow_mod(base: u64, mut exp: u64, p: u64) -> u64 {
    if p == 1 {
        return 0;
    }
    let mut base = base % p;
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Multiplicative inverse `a^(p-2) mod p` for prime `p`.
pub fn mod_inverse(a: u64, p: u64) -> Result<u64> {
    let a = a % p;
    if a == 0 {
        return Err(Error::NoInverse);
    }
    Ok(pow_mod(a, p - 2, p))
}

/// Deterministic Miller-Rabin, exact for every 64-bit input.
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
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
