//! Piecewise cubic Hermite interpolation on uniform grids.

/// Cubic Hermite value and derivative on `[x0, x0 + h]` at `x`.
#[inline]
pub fn hermite(x0: f64, h: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * s2 - 6.0 * s) / h;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = (-6.0 * s2 + 6.0 * s) / h;
    let dh11 = 3.0 * s2 - 2.0 * s;
    let slope = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (value, slope)
}

/// Fritsch–Carlson sufficient condition for the Hermite cubic through
/// `(y0, d0)`, `(y1, d1)` to be monotone on an interval of width `h`.
pub fn is_monotone_segment(h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> bool {
    let secant = (y1 - y0) / h;
    if secant == 0.0 {
        return d0 == 0.0 && d1 == 0.0;
    }
    let a = d0 / secant;
    let b = d1 / secant;
    a >= 0.0 && b >= 0.0 && a * a + b * b <= 9.0
}

/// Interval index for `x` on the uniform grid `start + i*step`, `i < n`.
#[inline]
pub fn uniform_index(start: f64, step: f64, n: usize, x: f64) -> usize {
    let raw = ((x - start) / step).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(n - 2)
    }
}
