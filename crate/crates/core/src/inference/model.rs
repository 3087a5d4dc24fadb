//! Hyperparameters, priors and the negative log joint density of the
//! augmented latent vector `x = (η, m, μ)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gmrf::precision::unscaled_precision;
use crate::gmrf::{
    build_precision_with, lattice_nested_dissection, Calibration, CholFactor, MaternParams,
    Ordering, SparseSymMatrix, Symbolic,
};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kappa: f64,
    #[serde(alias = "sigma2")]
    pub sigma2_m: f64,
    pub tau_iid: f64,
}

impl Hyperparams {
    pub fn new(kappa: f64, sigma2_m: f64, tau_iid: f64) -> Result<Self> {
        let h = Self {
            kappa,
            sigma2_m,
            tau_iid,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("sigma2_m", self.sigma2_m),
            ("tau_iid", self.tau_iid),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams {
            nu: 1,
            kappa: self.kappa,
            sigma2: self.sigma2_m,
        }
    }

    /// `(log κ, log σ², log τ)`, the optimisation coordinates.
    pub fn to_log(&self) -> [f64; 3] {
        [self.kappa.ln(), self.sigma2_m.ln(), self.tau_iid.ln()]
    }

    pub fn from_log(x: [f64; 3]) -> Self {
        Self {
            kappa: x[0].exp(),
            sigma2_m: x[1].exp(),
            tau_iid: x[2].exp(),
        }
    }

    /// Parses `kappa,sigma2,tau`.
    pub fn parse_triple(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad theta component `{t}`")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [k, s2, t] => Self::new(k, s2, t),
            _ => Err(Error::InvalidArgument(format!(
                "theta needs kappa,sigma2,tau; got `{s}`"
            ))),
        }
    }
}

/// Log-Gamma(a, b) density of `y = log x` where `x ~ Gamma(shape a, rate b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGamma {
    pub a: f64,
    pub b: f64,
}

impl LogGamma {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Log-Gamma parameters must be positive, got ({a}, {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        self.a * self.b.ln() - ln_gamma(self.a) + self.a * y - self.b * y.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// On `log τ_iid`.
    pub log_tau_iid: LogGamma,
    /// On `log(1/σ²)`.
    pub log_precision_m: LogGamma,
    /// On `log(√8/κ)`, the log practical range.
    pub log_range: LogGamma,
    pub mu_precision: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            log_tau_iid: LogGamma { a: 1.0, b: 5e-5 },
            log_precision_m: LogGamma { a: 1.0, b: 5e-5 },
            log_range: LogGamma { a: 1.0, b: 1e-2 },
            mu_precision: 1e-6,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for lg in [self.log_tau_iid, self.log_precision_m, self.log_range] {
            LogGamma::new(lg.a, lg.b)?;
        }
        if !(self.mu_precision >= 0.0 && self.mu_precision.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu_precision must be >= 0, got {}",
                self.mu_precision
            )));
        }
        Ok(())
    }

    /// Log prior density of θ on the transformed scales.
    pub fn ln_density(&self, theta: &Hyperparams) -> f64 {
        self.log_tau_iid.ln_pdf(theta.tau_iid.ln())
            + self.log_precision_m.ln_pdf(-theta.sigma2_m.ln())
            + self.log_range.ln_pdf(theta.matern().range().ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub eta: Vec<f64>,
    pub m: Vec<f64>,
    pub mu: f64,
}

impl LatentState {
    pub fn zeros(n: usize) -> Self {
        Self {
            eta: vec![0.0; n],
            m: vec![0.0; n],
            mu: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    /// Flat `[η, m, μ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.n() + 1);
        x.extend_from_slice(&self.eta);
        x.extend_from_slice(&self.m);
        x.push(self.mu);
        x
    }

    pub fn from_vec(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 1 {
            return Err(Error::InvalidArgument(format!(
                "joint vector length {} is not 2N+1",
                x.len()
            )));
        }
        let n = x.len() / 2;
        Ok(Self {
            eta: x[..n].to_vec(),
            m: x[n..2 * n].to_vec(),
            mu: x[2 * n],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.len() != self.eta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.eta.len(),
                got: self.m.len(),
            });
        }
        if !(self.eta.iter().chain(&self.m).all(|v| v.is_finite()) && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(
                "latent state has non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sparsity structure shared by every fit on one pattern of `Q`: symbolic
/// analyses of `Q` and of the joint Hessian plus the Hessian CSR template.
#[derive(Debug)]
pub struct Structure {
    n: usize,
    q_row_ptr: Vec<usize>,
    q_col_idx: Vec<usize>,
    q_symbolic: Arc<Symbolic>,
    h_symbolic: Arc<Symbolic>,
    h_row_ptr: Vec<usize>,
    h_col_idx: Vec<usize>,
}

impl Structure {
    /// `m_order` is the fill-reducing order of the structured block.
    pub fn new(q: &SparseSymMatrix, m_order: Option<&[usize]>) -> Result<Arc<Self>> {
        let n = q.n();
        let q_ordering = match m_order {
            Some(p) => Ordering::Given(p.to_vec()),
            None => Ordering::Natural,
        };
        let q_symbolic = Symbolic::analyze(q, &q_ordering)?;

        let mut h_row_ptr = Vec::with_capacity(2 * n + 2);
        let mut h_col_idx = Vec::new();
        h_row_ptr.push(0);
        for i in 0..n {
            h_col_idx.extend_from_slice(&[i, n + i, 2 * n]);
            h_row_ptr.push(h_col_idx.len());
        }
        for i in 0..n {
            let (cols, _) = q.row(i);
            if cols.binary_search(&i).is_err() {
                return Err(Error::InvalidArgument(format!(
                    "precision has no diagonal entry in row {i}"
                )));
            }
            h_col_idx.push(i);
            h_col_idx.extend(cols.iter().map(|&j| n + j));
            h_col_idx.push(2 * n);
            h_row_ptr.push(h_col_idx.len());
        }
        h_col_idx.extend(0..=2 * n);
        h_row_ptr.push(h_col_idx.len());

        // η first (they couple only to their own m_i and μ), then m in the
        // supplied order, μ last so its dense row causes no fill.
        let mut perm: Vec<usize> = (0..n).collect();
        match m_order {
            Some(p) => perm.extend(p.iter().map(|&k| n + k)),
            None => perm.extend(n..2 * n),
        }
        perm.push(2 * n);
        let template = SparseSymMatrix::from_csr_unchecked(
            2 * n + 1,
            h_row_ptr.clone(),
            h_col_idx.clone(),
            vec![1.0; h_col_idx.len()],
        );
        let h_symbolic = Symbolic::analyze(&template, &Ordering::Given(perm))?;
        Ok(Arc::new(Self {
            n,
            q_row_ptr: q.row_ptr().to_vec(),
            q_col_idx: q.col_idx().to_vec(),
            q_symbolic,
            h_symbolic,
            h_row_ptr,
            h_col_idx,
        }))
    }

    /// Structure of the SPDE precision on an `n1 × n2` lattice with nested
    /// dissection ordering.
    pub fn lattice(n1: usize, n2: usize) -> Result<Arc<Self>> {
        if n1 < 5 || n2 < 5 {
            return Err(Error::InvalidArgument(format!(
                "lattice {n1}x{n2} is too small for the SPDE precision (need >= 5x5)"
            )));
        }
        let q = unscaled_precision(1.0, n1, n2);
        let order = lattice_nested_dissection(n1, n2, 2);
        Self::new(&q, Some(&order))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hessian_nnz(&self) -> usize {
        self.h_col_idx.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.h_symbolic.nnz_l()
    }

    fn matches_q(&self, q: &SparseSymMatrix) -> bool {
        q.n() == self.n && q.row_ptr() == self.q_row_ptr && q.col_idx() == self.q_col_idx
    }
}

/// Posterior target for fixed θ: binary data, structured precision `Q`,
/// unstructured precision `τ` and intercept precision.
#[derive(Debug, Clone)]
pub struct Model {
    o: Vec<f64>,
    q: SparseSymMatrix,
    tau: f64,
    mu_precision: f64,
    log_det_q: f64,
    structure: Arc<Structure>,
}

impl Model {
    pub fn new(
        o: &[u8],
        q: SparseSymMatrix,
        tau_iid: f64,
        mu_precision: f64,
        structure: Arc<Structure>,
    ) -> Result<Self> {
        if o.len() != q.n() {
            return Err(Error::DimensionMismatch {
                expected: q.n(),
                got: o.len(),
            });
        }
        if let Some(&bad) = o.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "observations must be 0/1, found {bad}"
            )));
        }
        if !structure.matches_q(&q) {
            return Err(Error::InvalidArgument(
                "precision pattern does not match the cached structure".into(),
            ));
        }
        if !(tau_iid > 0.0 && tau_iid.is_finite()) || !(mu_precision >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad precisions tau_iid={tau_iid}, mu_precision={mu_precision}"
            )));
        }
        let log_det_q = structure.q_symbolic.factor(&q)?.log_det();
        Ok(Self {
            o: o.iter().map(|&v| v as f64).collect(),
            q,
            tau: tau_iid,
            mu_precision,
            log_det_q,
            structure,
        })
    }

    /// Model on an `n1 × n2` lattice with SPDE precision at `theta`.
    pub fn lattice(
        o: &[u8],
        n1: usize,
        n2: usize,
        theta: &Hyperparams,
        priors: &PriorSpec,
        calibration: Calibration,
        structure: Arc<Structure>,
    ) -> Result<Self> {
        theta.validate()?;
        let q = build_precision_with(&theta.matern(), n1, n2, calibration)?;
        Self::new(o, q, theta.tau_iid, priors.mu_precision, structure)
    }

    pub fn n(&self) -> usize {
        self.o.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.n() + 1
    }

    pub fn observations(&self) -> &[f64] {
        &self.o
    }

    pub fn precision(&self) -> &SparseSymMatrix {
        &self.q
    }

    pub fn structure(&self) -> &Arc<Structure> {
        &self.structure
    }

    pub fn tau_iid(&self) -> f64 {
        self.tau
    }

    pub fn mu_precision(&self) -> f64 {
        self.mu_precision
    }

    pub fn log_det_q(&self) -> f64 {
        self.log_det_q
    }

    /// All observations equal.
    pub fn is_degenerate(&self) -> bool {
        self.o.iter().all(|&v| v == self.o[0])
    }

    fn normalising_constant(&self) -> f64 {
        let n = self.n() as f64;
        let mut c = n * LN_2PI - 0.5 * n * self.tau.ln() - 0.5 * self.log_det_q;
        if self.mu_precision > 0.0 {
            c += 0.5 * LN_2PI - 0.5 * self.mu_precision.ln();
        }
        c
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Negative log joint density at the flat vector `x = [η, m, μ]`,
    /// including all normalising constants.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.kernel(x)? + self.normalising_constant())
    }

    /// [`Model::value`] without the θ-only constant.
    pub fn kernel(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let n = self.n();
        let (eta, rest) = x.split_at(n);
        let (m, mu) = (&rest[..n], rest[n]);
        let mut lik = 0.0;
        let mut rss = 0.0;
        for i in 0..n {
            lik += softplus(eta[i]) - self.o[i] * eta[i];
            let r = eta[i] - mu - m[i];
            rss += r * r;
        }
        let qf = self.q.quad_form(m)?;
        Ok(lik + 0.5 * self.tau * rss + 0.5 * qf + 0.5 * self.mu_precision * mu * mu)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let n = self.n();
        let (eta, rest) = x.split_at(n);
        let (m, mu) = (&rest[..n], rest[n]);
        let qm = self.q.mul_vec(m)?;
        let mut g = vec![0.0; 2 * n + 1];
        let mut sum_r = 0.0;
        for i in 0..n {
            let r = eta[i] - mu - m[i];
            sum_r += r;
            g[i] = sigmoid(eta[i]) - self.o[i] + self.tau * r;
            g[n + i] = -self.tau * r + qm[i];
        }
        g[2 * n] = -self.tau * sum_r + self.mu_precision * mu;
        Ok(g)
    }

    /// Exact Hessian. Pattern: `Q` on the m block, diagonal couplings between
    /// blocks and a dense intercept row and column.
    pub fn hessian(&self, x: &[f64]) -> Result<SparseSymMatrix> {
        self.check_len(x)?;
        let n = self.n();
        let s = &self.structure;
        let t = self.tau;
        let mut vals = Vec::with_capacity(s.h_col_idx.len());
        for &e in &x[..n] {
            let p = sigmoid(e);
            vals.extend_from_slice(&[p * (1.0 - p) + t, -t, -t]);
        }
        for i in 0..n {
            let (cols, qv) = self.q.row(i);
            vals.push(-t);
            for (&j, &v) in cols.iter().zip(qv) {
                vals.push(if j == i { v + t } else { v });
            }
            vals.push(t);
        }
        vals.extend(std::iter::repeat_n(-t, n));
        vals.extend(std::iter::repeat_n(t, n));
        vals.push(n as f64 * t + self.mu_precision);
        Ok(SparseSymMatrix::from_csr_unchecked(
            2 * n + 1,
            s.h_row_ptr.clone(),
            s.h_col_idx.clone(),
            vals,
        ))
    }

    /// Cholesky factor of the Hessian at `x`, reusing the cached analysis.
    pub fn factor_hessian(&self, x: &[f64]) -> Result<CholFactor> {
        let h = self.hessian(x)?;
        self.structure.h_symbolic.factor(&h)
    }

    /// Starting point: every logit at the empirical log-odds, m = 0.
    pub fn default_init(&self) -> Vec<f64> {
        let n = self.n();
        let mean = self.o.iter().sum::<f64>() / n as f64;
        let p = mean.clamp(0.01, 0.99);
        let l = (p / (1.0 - p)).ln();
        let mut x = vec![0.0; 2 * n + 1];
        x[..n].iter_mut().for_each(|v| *v = l);
        x[2 * n] = l;
        x
    }
}

/// Negative log joint at a [`LatentState`].
pub fn neg_log_joint(model: &Model, state: &LatentState) -> Result<f64> {
    state.validate()?;
    model.value(&state.to_vec())
}
