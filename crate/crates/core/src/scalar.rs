use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Precision used by the training pipeline. Gradient checks instantiate
/// the same generic code with `f64` instead.
pub type Real = f32;

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;

    /// exp for bulk activation work. f32 uses a branchless polynomial
    /// (relative error ~1e-7) that the compiler can vectorize; f64 stays
    /// exact so double-precision oracles are unaffected.
    fn exp_bulk(self) -> Self {
        self.exp()
    }

    fn maxv(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    fn minv(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        self.maxv(lo).minv(hi)
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn powi(self, n: i32) -> Self {
                self.powi(n)
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f64);

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn ln_1p(self) -> Self {
        self.ln_1p()
    }
    fn tanh(self) -> Self {
        self.tanh()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn powi(self, n: i32) -> Self {
        self.powi(n)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
    fn exp_bulk(self) -> Self {
        exp_fast_f32(self)
    }
}

/// Branchless polynomial exp: Cody-Waite range reduction against a
/// two-part ln2 plus a degree-5 minimax polynomial on the reduced range,
/// exponent assembled from bits. Relative error stays ~1e-7 across the
/// full f32 range, and the straight-line arithmetic vectorizes.
#[inline]
fn exp_fast_f32(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // 1.5 * 2^23: adding and subtracting rounds to the nearest integer
    // without a libm round() call, keeping the loop vectorizable
    const MAGIC: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let f = (x * std::f32::consts::LOG2_E + MAGIC) - MAGIC;
    let r = (x - f * LN2_HI) - f * LN2_LO;
    let mut p = 1.987_569_15e-4_f32;
    p = p * r + 1.398_199_95e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_55e-1;
    p = p * r + 5.000_000_1e-1;
    let z = p * r * r + r + 1.0;
    let scale = f32::from_bits((((f as i32) + 127) << 23) as u32);
    scale * z
}


/// Shorthand for lifting an `f64` constant into the generic scalar type.
#[inline]
pub fn c<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}
