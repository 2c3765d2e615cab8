//! Tiny float shims so the crate builds without `std`.

#[cfg(feature = "std")]
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(feature = "std")]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    x.abs()
}

#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Small non-negative integer power by repeated multiplication;
/// identical bits on std and no_std builds.
#[inline]
pub(crate) fn powi_u(base: f64, exp: u32) -> f64 {
    let mut acc = 1.0f64;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}
