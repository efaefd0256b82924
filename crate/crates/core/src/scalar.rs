//! Numeric scalar abstraction for currents, weights and membrane potentials.
//!
//! The functional kernels are written once against [`Scalar`]. Signed
//! integers give the bit-exact hardware semantics; floats are accepted so the
//! neuron dynamics can be exercised with real-valued parameters.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use num_traits::{Num, NumCast, Signed};

/// A signed numeric type usable as a synaptic current or weight.
pub trait Scalar:
    Num + Signed + NumCast + Copy + PartialOrd + AddAssign + SubAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Multiply by `2^-shift`, rounding toward negative infinity.
    ///
    /// Integers use an arithmetic right shift; floats divide and floor.
    fn scale_pow2(self, shift: u32) -> Self;

    /// Lossless conversion from a bundle or spike count.
    fn from_count(count: u32) -> Self {
        <Self as NumCast>::from(count).expect("count representable in scalar")
    }
}

macro_rules! int_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            #[inline]
            fn scale_pow2(self, shift: u32) -> Self {
                if shift >= <$t>::BITS {
                    if self < 0 { -1 } else { 0 }
                } else {
                    self >> shift
                }
            }
        }
    )*};
}

macro_rules! float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            #[inline]
            fn scale_pow2(self, shift: u32) -> Self {
                (self / (2.0 as $t).powi(shift as i32)).floor()
            }
        }
    )*};
}

int_scalar!(i16, i32, i64);
float_scalar!(f32, f64);
