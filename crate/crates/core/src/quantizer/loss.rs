use super::Density;
use crate::error::{arg_err, Result};

/// Sampling loss `Φ(n)` by its recursion over bit widths.
pub fn sampling_loss(phi: &Density, n: u32) -> Result<f64> {
    if n < 1 {
        return arg_err("sampling loss needs n >= 1");
    }
    let mut total = 1.0 - phi.pdf(0.5);
    for m in 2..=n {
        total += delta(phi, m);
    }
    Ok(total)
}

/// `L(n) = Φ(n) − Φ(n−1)` in closed form.
pub fn loss_delta(phi: &Density, n: u32) -> Result<f64> {
    if n < 2 {
        return arg_err("loss delta needs n >= 2");
    }
    Ok(delta(phi, n))
}

fn delta(phi: &Density, n: u32) -> f64 {
    let hi = 2f64.powi(1 - n as i32);
    let lo = 2f64.powi(-(n as i32));
    hi * (phi.pdf(hi) - phi.pdf(lo))
}

/// Rows `(n, Φ(n), L(n))` for `n = 1..=nmax`; `L(1)` is undefined.
pub fn sampling_loss_table(phi: &Density, nmax: u32) -> Result<Vec<(u32, f64, Option<f64>)>> {
    if nmax < 1 {
        return arg_err("nmax must be at least 1");
    }
    let mut rows = Vec::with_capacity(nmax as usize);
    let mut total = 0.0;
    for n in 1..=nmax {
        let l = (n >= 2).then(|| delta(phi, n));
        total = if n == 1 { 1.0 - phi.pdf(0.5) } else { total + l.unwrap() };
        rows.push((n, total, l));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_flat() {
        let u = Density::uniform();
        assert_eq!(sampling_loss(&u, 1).unwrap(), 0.5);
        assert_eq!(sampling_loss(&u, 4).unwrap(), 0.5);
        for n in 2..8 {
            assert_eq!(loss_delta(&u, n).unwrap(), 0.0);
        }
    }

    #[test]
    fn delta_matches_difference() {
        let g = Density::truncated_gaussian(0.3).unwrap();
        for n in 2..8 {
            let d = sampling_loss(&g, n).unwrap() - sampling_loss(&g, n - 1).unwrap();
            assert!((d - loss_delta(&g, n).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn argument_errors() {
        let u = Density::uniform();
        assert!(sampling_loss(&u, 0).is_err());
        assert!(loss_delta(&u, 1).is_err());
        assert_eq!(sampling_loss_table(&u, 1).unwrap(), vec![(1, 0.5, None)]);
    }

    #[test]
    fn table_agrees_with_direct_calls() {
        let g = Density::truncated_gaussian(0.5).unwrap();
        for (n, phi_n, l) in sampling_loss_table(&g, 6).unwrap() {
            assert_eq!(phi_n, sampling_loss(&g, n).unwrap());
            assert_eq!(l, loss_delta(&g, n).ok());
        }
    }
}
