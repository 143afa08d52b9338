use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimators are generic over (`f32` or `f64`).
///
/// The solver tolerances used throughout the crate are calibrated for `f64`;
/// `f32` instantiations compile and run but should use looser tolerances.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(1 - exp(u))` for `u < 0`, switching branches at `-ln 2`.
#[inline]
pub fn log1mexp<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        return T::neg_infinity();
    }
    if u > -T::lit(std::f64::consts::LN_2) {
        (-u.exp_m1()).ln()
    } else {
        (-u.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1mexp_matches_naive_away_from_extremes() {
        for &u in &[-0.01_f64, -0.3, -0.69, -0.7, -2.0, -10.0] {
            let naive = (1.0 - u.exp()).ln();
            assert!((log1mexp(u) - naive).abs() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn log1mexp_is_accurate_near_zero_and_far_left() {
        let u = -1e-15_f64;
        assert!((log1mexp(u) - (1e-15_f64).ln()).abs() < 1e-9);
        let u = -40.0_f64;
        assert!((log1mexp(u) + (-40.0_f64).exp()).abs() < 1e-30);
        assert_eq!(log1mexp(0.0_f64), f64::NEG_INFINITY);
    }
}
