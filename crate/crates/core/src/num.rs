//! Exact rational arithmetic helpers.
//!
//! Coefficients stay rational from parse time through certificate
//! verification; conversion to floating point happens only in the SDP layer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use num_bigint::{BigInt, Sign};

use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = num_rational::BigRational;

/// Rational from an integer pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat_zero() -> Rat {
    Rat::zero()
}

pub fn rat_one() -> Rat {
    Rat::one()
}

pub fn to_f64(r: &Rat) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

/// Parses a decimal or fractional literal: `3`, `-0.25`, `4/5`.
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rat::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut numer: BigInt = if int_part.is_empty() {
        BigInt::zero()
    } else {
        int_part.parse().ok()?
    };
    let mut denom = BigInt::one();
    for c in frac_part.chars() {
        numer = numer * 10 + (c as u8 - b'0');
        denom *= 10;
    }
    let mut r = Rat::new(numer, denom);
    if neg {
        r = -r;
    }
    Some(r)
}

/// Renders a rational: integers plainly, terminating decimals as decimals,
/// everything else as `num/den`. Output re-parses to the same value.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        return r.numer().to_string();
    }
    // denominator 2^a * 5^b terminates in decimal
    let mut d = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0usize;
    let mut fives = 0usize;
    while (&d % &two).is_zero() {
        d /= &two;
        twos += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        fives += 1;
    }
    if d.is_one() && twos.max(fives) <= 18 {
        let tens = twos.max(fives);
        let scale = BigInt::from(10).pow(tens as u32);
        let scaled = r.numer() * &scale / r.denom();
        let neg = scaled.sign() == Sign::Minus;
        let digits = scaled.magnitude().to_string();
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        if digits.len() <= tens {
            out.push_str("0.");
            for _ in 0..tens - digits.len() {
                out.push('0');
            }
            out.push_str(&digits);
        } else {
            let (i, f) = digits.split_at(digits.len() - tens);
            let _ = write!(out, "{i}.{f}");
        }
        return out;
    }
    let mut out = r.numer().to_string();
    out.push('/');
    out.push_str(&r.denom().to_string());
    out
}

/// Best rational approximation of `x` with denominator at most `max_den`,
/// by continued fractions.
pub fn approx_f64(x: f64, max_den: u64) -> Rat {
    if !x.is_finite() {
        return rat_zero();
    }
    let neg = x < 0.0;
    let mut x = x.abs();
    // (p0/q0, p1/q1) convergents
    let (mut p0, mut q0, mut p1, mut q1) = (
        BigInt::zero(),
        BigInt::one(),
        BigInt::one(),
        BigInt::zero(),
    );
    let cap = BigInt::from(max_den);
    for _ in 0..64 {
        let a = x.floor();
        if a > 9.2e18 {
            break;
        }
        let ai = BigInt::from(a as u64);
        let p2 = &ai * &p1 + &p0;
        let q2 = &ai * &q1 + &q0;
        if q2 > cap {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = x - a;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    if q1.is_zero() {
        return rat_zero();
    }
    let r = Rat::new(p1, q1);
    if neg {
        -r
    } else {
        r
    }
}

/// `sum_{i=0..=d} C(n, i)` as f64 (overflows gracefully to +inf).
pub fn binom_sum(n: usize, d: usize) -> f64 {
    let mut total = 0.0f64;
    let mut term = 1.0f64; // C(n, 0)
    total += term;
    for i in 1..=d.min(n) {
        term = term * ((n - i + 1) as f64) / (i as f64);
        total += term;
    }
    total
}

pub fn rat_abs(r: &Rat) -> Rat {
    r.abs()
}

pub fn rat_max<'a>(a: &'a Rat, b: &'a Rat) -> &'a Rat {
    if a >= b {
        a
    } else {
        b
    }
}

pub fn rat_min<'a>(a: &'a Rat, b: &'a Rat) -> &'a Rat {
    if a <= b {
        a
    } else {
        b
    }
}

/// Elementwise interval product of `[al,au]` and `[bl,bu]`.
pub fn interval_mul(al: &Rat, au: &Rat, bl: &Rat, bu: &Rat) -> (Rat, Rat) {
    let cands: Vec<Rat> = [al * bl, al * bu, au * bl, au * bu].into();
    let lo = cands.iter().min().unwrap().clone();
    let hi = cands.iter().max().unwrap().clone();
    (lo, hi)
}

/// Interval power `[l,u]^k`, k >= 1.
pub fn interval_pow(l: &Rat, u: &Rat, k: u32) -> (Rat, Rat) {
    let (mut lo, mut hi) = (l.clone(), u.clone());
    for _ in 1..k {
        let (nl, nh) = interval_mul(&lo, &hi, l, u);
        lo = nl;
        hi = nh;
    }
    (lo, hi)
}
