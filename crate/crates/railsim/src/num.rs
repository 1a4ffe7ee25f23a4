//! Scalar abstraction for matrix entries.
//!
//! Byte volumes are held as `u64` so that conservation and symmetry checks
//! stay exact; derived rates and loads use `f64`. Matrix types and the load
//! algebra are generic over this trait so both routes share one code path.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Num, NumAssign, NumCast};

pub trait Scalar: Num + NumAssign + NumCast + Copy + PartialOrd + Debug + Sum {}

impl<T> Scalar for T where T: Num + NumAssign + NumCast + Copy + PartialOrd + Debug + Sum {}

/// Lossy conversion into `f64` for reporting.
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    NumCast::from(v).expect("scalar convertible to f64")
}
