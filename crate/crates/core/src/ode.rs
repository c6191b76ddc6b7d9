//! Fixed-step classical Runge–Kutta integration over small state arrays.

/// One classical RK4 step of `y' = f(y)` with step `h`.
#[inline]
pub fn rk4_step<const N: usize, F>(f: F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&axpy(y, &k1, 0.5 * h));
    let k3 = f(&axpy(y, &k2, 0.5 * h));
    let k4 = f(&axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], k: &[f64; N], c: f64) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += c * k[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let f = |y: &[f64; 1]| [-y[0]];
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0];
            for _ in 0..n {
                y = rk4_step(f, &y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "convergence ratio {ratio}");
    }
}
