//! Kaiser-Bessel interpolation kernel and its continuous Fourier transform.

use std::f64::consts::PI;

/// Oversampling factor of the gridding path.
pub const OVERSAMPLING: f64 = 2.0;

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KaiserBessel {
    pub width: usize,
    pub beta: f64,
}

impl KaiserBessel {
    /// Shape parameter from Beatty et al. for the given width at oversampling 2.
    pub fn new(width: usize) -> Self {
        let w = width as f64;
        let sigma = OVERSAMPLING;
        let beta = PI * ((w / sigma).powi(2) * (sigma - 0.5).powi(2) - 0.8).sqrt();
        Self { width, beta }
    }

    /// Kernel value at offset `t` (grid units), zero outside `|t| < width / 2`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let half = 0.5 * self.width as f64;
        let r = t / half;
        let arg = 1.0 - r * r;
        if arg < 0.0 {
            return 0.0;
        }
        bessel_i0(self.beta * arg.sqrt())
    }

    /// Continuous Fourier transform of `eval` at frequency `nu` (cycles per grid unit).
    pub fn fourier(&self, nu: f64) -> f64 {
        let w = self.width as f64;
        let a = PI * w * nu;
        let d = self.beta * self.beta - a * a;
        if d > 1e-12 {
            let s = d.sqrt();
            w * s.sinh() / s
        } else if d < -1e-12 {
            let s = (-d).sqrt();
            w * s.sin() / s
        } else {
            w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_reference_values() {
        // Abramowitz & Stegun table 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }

    #[test]
    fn fourier_matches_quadrature() {
        let kb = KaiserBessel::new(6);
        let half = 3.0;
        let n = 20_000;
        let h = 2.0 * half / n as f64;
        for &nu in &[0.0, 0.1, 0.25] {
            // Simpson's rule on the symmetric kernel
            let mut acc = 0.0;
            for i in 0..=n {
                let t = -half + i as f64 * h;
                let wgt = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += wgt * kb.eval(t) * (2.0 * PI * nu * t).cos();
            }
            acc *= h / 3.0;
            let exact = kb.fourier(nu);
            assert!(((acc - exact) / exact).abs() < 1e-6, "nu={nu}: {acc} vs {exact}");
        }
    }
}
