//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the simulator is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Positive part `max(x, 0)`.
    #[inline]
    fn pos(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Real> CompensatedSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), carry: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

/// Number of values reduced per block in [`deterministic_sum`].
///
/// Fixed, so the reduction tree never depends on the thread count.
pub const REDUCTION_BLOCK: usize = 1024;

/// Sums `len` terms produced by `term(i)`.
///
/// Terms are grouped into consecutive blocks of [`REDUCTION_BLOCK`]; each
/// block is summed with compensation (possibly on different workers) and the
/// block partials are then combined left to right with compensation. The
/// result is bit-identical for any rayon pool size.
pub fn deterministic_sum<T, F>(len: usize, term: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;

    let blocks = len.div_ceil(REDUCTION_BLOCK);
    let partials: Vec<T> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * REDUCTION_BLOCK;
            let hi = (lo + REDUCTION_BLOCK).min(len);
            let mut acc = CompensatedSum::new();
            for i in lo..hi {
                acc.add(term(i));
            }
            acc.value()
        })
        .collect();
    let mut acc = CompensatedSum::new();
    for p in partials {
        acc.add(p);
    }
    acc.value()
}

/// Deterministic maximum of `term(i)` over `0..len`; `-inf` when empty.
pub fn deterministic_max<T, F>(len: usize, term: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;
    // max is associative and commutative on non-NaN input, so any tree is exact.
    (0..len)
        .into_par_iter()
        .with_min_len(REDUCTION_BLOCK)
        .map(&term)
        .reduce(T::neg_infinity, |a, b| if b > a { b } else { a })
}
