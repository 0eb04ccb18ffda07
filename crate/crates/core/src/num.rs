//! Scalar abstractions shared by the numeric parts of the crate.
//!
//! Vector math (embeddings, cosine search, clustering) needs square roots and
//! is generic over [`Real`] (`f32`/`f64`). Counting metrics (IR metrics,
//! TGC/SGC, usage statistics, cost) only need field arithmetic and are generic
//! over [`Scalar`], which additionally admits exact rationals so reported
//! values can be checked without rounding noise.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Field-like scalar used by counting metrics: f32, f64 or an exact rational.
pub trait Scalar: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug {
    /// Converts a count; exact for rationals.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    /// Converts a price or other configuration constant.
    fn from_config(x: f64) -> Self {
        Self::from_f64(x).expect("finite configuration constant")
    }

    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug {}

/// floating point: f32 or f64
pub trait Real:
    Float + FromPrimitive + Debug + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn rational_counts_are_exact() {
        let r: Ratio<i64> = Scalar::ratio(113, 200);
        assert_eq!(r, Ratio::new(113, 200));
        let p: Ratio<i64> = Scalar::from_config(15.0);
        assert_eq!(p, Ratio::from_integer(15));
    }

    #[test]
    fn float_counts() {
        let x: f64 = Scalar::ratio(3, 4);
        assert_eq!(x, 0.75);
        let y: f32 = Scalar::from_count(7);
        assert_eq!(y, 7.0);
    }
}
