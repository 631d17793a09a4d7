//! Scalar LLR arithmetic.
//!
//! Convention: `l = ln(P(bit = 0) / P(bit = 1))`, so a positive LLR favours 0.

/// LLR of the XOR of two independent bits, `ln((1 + e^{a+b}) / (e^a + e^b))`.
///
/// Evaluated as `sign(a)·sign(b)·min(|a|,|b|)` plus two bounded correction
/// terms, which is exact and never overflows.
#[inline]
pub fn boxplus(a: f64, b: f64) -> f64 {
    let s = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    s * a.abs().min(b.abs()) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

/// Partial derivatives of [`boxplus`] with respect to `a` and `b`.
#[inline]
pub fn boxplus_grad(a: f64, b: f64) -> (f64, f64) {
    let s = sigmoid(a + b);
    (s - sigmoid(a - b), s - sigmoid(b - a))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Hard decision: 0 for `l >= 0`, 1 otherwise.
#[inline]
pub fn hard(l: f64) -> u8 {
    (l < 0.0) as u8
}

/// BPSK image `1 - 2c` of a bit.
#[inline]
pub fn bpsk(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}
