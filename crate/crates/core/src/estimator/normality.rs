//! Normality tests and QQ-plot data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalityTest {
    #[default]
    ShapiroWilk,
    DagostinoK2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub test: NormalityTest,
    /// W for Shapiro–Wilk, K² for D'Agostino.
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub standardized: Vec<f64>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn sorted(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "sample contains non-finite values".into(),
        ));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Shapiro–Wilk W and p-value with Royston's approximation (AS R94),
/// for `3 ≤ n ≤ 5000`.
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "Shapiro-Wilk needs 3 <= n <= 5000, got {n}"
        )));
    }
    let xs = sorted(x)?;
    if xs[n - 1] - xs[0] < 1e-19 * xs[n - 1].abs().max(1.0) {
        return Err(Error::InvalidArgument("sample is constant".into()));
    }
    let norm = std_normal();
    let nn2 = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let an25 = an + 0.25;
        let m: Vec<f64> = (1..=nn2)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / an25))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            (
                1,
                ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt(),
            )
        };
        a[0] = a1;
        for i in i1..nn2 {
            a[i] = -m[i] / fac;
        }
    }
    let mean = xs.iter().sum::<f64>() / an;
    let ssq: f64 = xs.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = (0..nn2).map(|i| a[i] * (xs[n - 1 - i] - xs[i])).sum();
    let w = (num * num / ssq).min(1.0);

    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        let p = (pi6 * (w.sqrt().asin() - stqr)).max(0.0);
        return Ok((w, p.min(1.0)));
    }
    let y = (1.0 - w).ln();
    let xx = an.ln();
    let (m, s, y) = if n <= 11 {
        let gamma = -2.273 + 0.459 * an;
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        let y = -(gamma - y).ln();
        (
            poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an),
            poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp(),
            y,
        )
    } else {
        (
            poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], xx),
            poly(&[-0.4803, -0.082676, 0.0030302], xx).exp(),
            y,
        )
    };
    let p = 1.0 - norm.cdf((y - m) / s);
    Ok((w, p.clamp(0.0, 1.0)))
}

/// D'Agostino–Pearson K² omnibus test (skewness plus kurtosis), `n ≥ 20`.
pub fn dagostino_k2(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 20 {
        return Err(Error::InvalidArgument(format!(
            "D'Agostino K2 needs n >= 20, got {n}"
        )));
    }
    let xs = sorted(x)?;
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let moment = |k: i32| xs.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let m2 = moment(2);
    if !(m2 > 0.0) {
        return Err(Error::InvalidArgument("sample is constant".into()));
    }
    let b1 = moment(3) / m2.powf(1.5);
    let b2 = moment(4) / (m2 * m2);

    let y = b1 * ((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0))).sqrt();
    let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let zs = delta * (y / alpha + ((y / alpha).powi(2) + 1.0).sqrt()).ln();

    let e = 3.0 * (nf - 1.0) / (nf + 1.0);
    let varb2 =
        24.0 * nf * (nf - 2.0) * (nf - 3.0) / ((nf + 1.0) * (nf + 1.0) * (nf + 3.0) * (nf + 5.0));
    let xk = (b2 - e) / varb2.sqrt();
    let sqrtbeta1 = 6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * (6.0 * (nf + 3.0) * (nf + 5.0) / (nf * (nf - 2.0) * (nf - 3.0))).sqrt();
    let a =
        6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + (1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + xk * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    let zk = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let k2 = zs * zs + zk * zk;
    // Chi-square with 2 degrees of freedom.
    Ok((k2, (-0.5 * k2).exp()))
}

pub fn normality_report(standardized: &[f64], test: NormalityTest) -> Result<NormalityReport> {
    let (statistic, p_value) = match test {
        NormalityTest::ShapiroWilk => shapiro_wilk(standardized)?,
        NormalityTest::DagostinoK2 => dagostino_k2(standardized)?,
    };
    Ok(NormalityReport {
        test,
        statistic,
        p_value,
        n: standardized.len(),
        standardized: standardized.to_vec(),
    })
}

/// `(theoretical, sample)` pairs with Blom plotting positions.
pub fn qq_points(x: &[f64]) -> Result<Vec<(f64, f64)>> {
    let xs = sorted(x)?;
    let n = xs.len() as f64;
    let norm = std_normal();
    Ok(xs
        .into_iter()
        .enumerate()
        .map(|(i, v)| (norm.inverse_cdf((i as f64 + 1.0 - 0.375) / (n + 0.25)), v))
        .collect())
}
