//! Exact oracle arithmetic shared by the integration tests.
#![allow(dead_code)]

use mxdp::AccumulatorValue;
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// `v * 2^lsb`, exactly.
#[derive(Clone, Debug)]
pub struct Exact {
    pub v: BigInt,
    pub lsb: i32,
}

impl Exact {
    pub fn zero() -> Self {
        Exact { v: BigInt::zero(), lsb: 0 }
    }

    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mag, lsb) = if biased == 0 { (frac, -1074) } else { (frac | (1 << 52), biased - 1075) };
        let v = BigInt::from(mag);
        Exact { v: if x < 0.0 { -v } else { v }, lsb }
    }

    pub fn from_acc(a: &AccumulatorValue) -> Self {
        if a.zero {
            return Self::zero();
        }
        let mag = BigInt::from((1u64 << a.mantissa_bits) | a.mantissa as u64);
        Exact {
            v: if a.negative { -mag } else { mag },
            lsb: a.exponent - a.mantissa_bits as i32,
        }
    }

    pub fn add(&self, o: &Exact) -> Exact {
        if self.v.is_zero() {
            return o.clone();
        }
        if o.v.is_zero() {
            return self.clone();
        }
        let lsb = self.lsb.min(o.lsb);
        let v = (&self.v << (self.lsb - lsb) as usize) + (&o.v << (o.lsb - lsb) as usize);
        Exact { v, lsb }
    }

    /// Rounds once to `m` fraction bits (RNE): `(negative, exponent, mantissa)`.
    pub fn round(&self, m: u32) -> Option<(bool, i32, u32)> {
        if self.v.is_zero() {
            return None;
        }
        let neg = self.v.is_negative();
        let mag = self.v.abs();
        let bl = mag.bits() as i32;
        let s = m as i32 + 1;
        let mut exp = self.lsb + bl - 1;
        let q = if bl <= s {
            mag << (s - bl) as usize
        } else {
            let sh = (bl - s) as usize;
            let mut q: BigInt = &mag >> sh;
            let rem = &mag - (&q << sh);
            let half = BigInt::one() << (sh - 1);
            if rem > half || (rem == half && (&q & BigInt::one()).is_one()) {
                q += 1;
            }
            if q.bits() as i32 > s {
                q >>= 1;
                exp += 1;
            }
            q
        };
        let mant = (q - (BigInt::one() << m as usize)).to_u32().unwrap();
        Some((neg, exp, mant))
    }
}

pub fn matches_rounded(got: &AccumulatorValue, want: Option<(bool, i32, u32)>) -> bool {
    match want {
        None => got.zero,
        Some((n, e, m)) => !got.zero && got.negative == n && got.exponent == e && got.mantissa == m,
    }
}

impl Exact {
    pub fn to_f64(&self) -> f64 {
        self.v.to_f64().unwrap() * 2f64.powi(self.lsb)
    }

    pub fn sub(&self, o: &Exact) -> Exact {
        self.add(&Exact { v: -&o.v, lsb: o.lsb })
    }
}
