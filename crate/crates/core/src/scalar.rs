//! Scalar types the metrics and topology statistics are computed in.
//!
//! Every ratio this crate reports is a quotient of two block or hop counts, so
//! a scalar only has to be constructible from an integer fraction. Exact
//! rationals give zero-tolerance comparisons in tests; floats are convenient
//! for plotting and tables.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// A number type metrics can be expressed in: `f32`, `f64` or an exact rational.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    /// `numer / denom`. `denom` must be nonzero.
    fn from_ratio(numer: u64, denom: u64) -> Self;

    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        numer as f64 / denom as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        (numer as f64 / denom as f64) as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for Ratio<u64> {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        Ratio::new(numer, denom)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for Ratio<i64> {
    fn from_ratio(numer: u64, denom: u64) -> Self {
        let numer = i64::try_from(numer).expect("count fits in i64");
        let denom = i64::try_from(denom).expect("count fits in i64");
        Ratio::new(numer, denom)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
