//! Exact accumulation of `integer × f64` terms with a single final rounding.
//!
//! Integrals of step functions over event times are built from terms
//! `count × t`. Summing them in floating point makes the result depend on the
//! summation order; accumulating the exact dyadic value and rounding once at
//! the end gives the same bits no matter how the integral is decomposed.

use num_bigint::{BigInt, Sign};
use num_traits::{ToPrimitive, Zero};

#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    /// Value is `mantissa × 2^exp`.
    mantissa: BigInt,
    exp: i64,
}

fn decompose(x: f64) -> (i128, i64) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (m, e) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1i128 << 52), exp_bits - 1075) };
    (if negative { -m } else { m }, e)
}

/// `x × 2^exp` without intermediate overflow for normal results.
fn scale_pow2(mut x: f64, mut exp: i64) -> f64 {
    let pow2 = |e: i64| f64::from_bits(((e + 1023) as u64) << 52);
    while exp > 1000 {
        x *= pow2(1000);
        exp -= 1000;
    }
    while exp < -1000 {
        x *= pow2(-1000);
        exp += 1000;
    }
    x * pow2(exp)
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count × t` exactly.
    pub fn add_scaled(&mut self, count: i64, t: f64) {
        assert!(t.is_finite(), "non-finite value in exact sum");
        if count == 0 || t == 0.0 {
            return;
        }
        let (m, e) = decompose(t);
        let term = BigInt::from(m) * BigInt::from(count);
        if self.mantissa.is_zero() {
            self.mantissa = term;
            self.exp = e;
            return;
        }
        if e < self.exp {
            self.mantissa <<= (self.exp - e) as usize;
            self.exp = e;
        }
        self.mantissa += term << (e - self.exp) as usize;
    }

    pub fn add(&mut self, t: f64) {
        self.add_scaled(1, t);
    }

    /// Adds `count × (end - start)` exactly.
    pub fn add_interval(&mut self, count: i64, start: f64, end: f64) {
        self.add_scaled(count, end);
        self.add_scaled(-count, start);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        if other.mantissa.is_zero() {
            return;
        }
        if self.mantissa.is_zero() {
            *self = other.clone();
            return;
        }
        let exp = self.exp.min(other.exp);
        let a = &self.mantissa << (self.exp - exp) as usize;
        let b = &other.mantissa << (other.exp - exp) as usize;
        self.mantissa = a + b;
        self.exp = exp;
    }

    pub fn negated(&self) -> ExactSum {
        ExactSum { mantissa: -&self.mantissa, exp: self.exp }
    }

    /// Correctly rounded (half to even) value.
    pub fn value(&self) -> f64 {
        if self.mantissa.is_zero() {
            return 0.0;
        }
        let negative = self.mantissa.sign() == Sign::Minus;
        let mag = self.mantissa.magnitude();
        let bits = mag.bits();
        let result = if bits <= 53 {
            scale_pow2(mag.to_u64().unwrap() as f64, self.exp)
        } else {
            let shift = bits - 54;
            let top = (mag >> shift).to_u64().unwrap();
            let sticky = mag.trailing_zeros().unwrap_or(0) < shift;
            let mut m = top >> 1;
            if top & 1 == 1 && (sticky || m & 1 == 1) {
                m += 1;
            }
            scale_pow2(m as f64, self.exp + shift as i64 + 1)
        };
        if negative {
            -result
        } else {
            result
        }
    }
}
