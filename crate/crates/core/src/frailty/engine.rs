//! Risk-set sweeps for the Cox partial likelihood with cluster log-frailties.

use nalgebra::{DMatrix, DVector};

/// A fitting problem: a set of observation rows laid out for risk-set
/// sweeps. Covariates are centered; `center` restores the raw scale.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub p: usize,
    pub g: usize,
    pub x: Vec<f64>,
    pub center: Vec<f64>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    pub cluster: Vec<usize>,
    /// Observation indices ordered by decreasing time.
    pub order: Vec<usize>,
    /// Ranges into `order` sharing one time value, in decreasing time.
    pub blocks: Vec<(usize, usize)>,
    pub cluster_events: Vec<f64>,
    pub cluster_size: Vec<usize>,
    pub n_events: usize,
}

impl Problem {
    /// Build from raw row-major covariates restricted to `rows`.
    pub fn new(
        x_raw: &[f64],
        p: usize,
        time: &[f64],
        event: &[bool],
        cluster: &[usize],
        g: usize,
        rows: &[usize],
    ) -> Self {
        let n = rows.len();
        let mut center = vec![0.0; p];
        for &r in rows {
            for k in 0..p {
                center[k] += x_raw[r * p + k];
            }
        }
        if n > 0 {
            center.iter_mut().for_each(|c| *c /= n as f64);
        }
        let mut x = Vec::with_capacity(n * p);
        let mut t = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut cluster_events = vec![0.0; g];
        let mut cluster_size = vec![0; g];
        for &r in rows {
            for k in 0..p {
                x.push(x_raw[r * p + k] - center[k]);
            }
            t.push(time[r]);
            e.push(event[r]);
            c.push(cluster[r]);
            cluster_size[cluster[r]] += 1;
            if event[r] {
                cluster_events[cluster[r]] += 1.0;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| t[b].total_cmp(&t[a]));
        let mut blocks = Vec::new();
        let mut lo = 0;
        while lo < n {
            let mut hi = lo + 1;
            while hi < n && t[order[hi]] == t[order[lo]] {
                hi += 1;
            }
            blocks.push((lo, hi));
            lo = hi;
        }
        let n_events = e.iter().filter(|&&v| v).count();
        Self { p, g, x, center, time: t, event: e, cluster: c, order, blocks, cluster_events, cluster_size, n_events }
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    /// Column rank check of the centered design on the event rows.
    pub fn full_rank_on_events(&self) -> bool {
        let p = self.p;
        if p == 0 {
            return true;
        }
        let rows: Vec<usize> = (0..self.n()).filter(|&i| self.event[i]).collect();
        if rows.len() < 2 {
            return false;
        }
        let mut mean = vec![0.0; p];
        for &i in &rows {
            for k in 0..p {
                mean[k] += self.x[i * p + k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        for &i in &rows {
            for a in 0..p {
                let va = self.x[i * p + a] - mean[a];
                for b in 0..p {
                    xtx[(a, b)] += va * (self.x[i * p + b] - mean[b]);
                }
            }
        }
        // Scale to unit diagonal before testing definiteness.
        let diag: Vec<f64> = (0..p).map(|k| xtx[(k, k)]).collect();
        if diag.iter().any(|&d| d <= 1e-12) {
            return false;
        }
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] /= (diag[a] * diag[b]).sqrt();
            }
        }
        xtx.symmetric_eigenvalues().min() > 1e-10
    }
}

/// Scratch buffers and outputs of one sweep.
#[derive(Debug, Clone)]
pub(crate) struct Sweep {
    pub dim: usize,
    pub frailty: bool,
    pub pl: f64,
    pub grad: Vec<f64>,
    /// Observed information, row-major `dim × dim`.
    pub info: Vec<f64>,
    /// Expected event count per cluster, `sum_k d_k S0_c(t_k) / S0(t_k)`.
    pub expected: Vec<f64>,
    pub sum_d_log_d: f64,
    eta: Vec<f64>,
    s1x: Vec<f64>,
    s2x: Vec<f64>,
    s0c: Vec<f64>,
    s1xc: Vec<f64>,
    a: Vec<f64>,
}

impl Sweep {
    pub fn new(problem: &Problem, frailty: bool) -> Self {
        let p = problem.p;
        let g = problem.g;
        let dim = p + if frailty { g } else { 0 };
        Self {
            dim,
            frailty,
            pl: 0.0,
            grad: vec![0.0; dim],
            info: vec![0.0; dim * dim],
            expected: vec![0.0; g],
            sum_d_log_d: 0.0,
            eta: vec![0.0; problem.n()],
            s1x: vec![0.0; p],
            s2x: vec![0.0; p * p],
            s0c: vec![0.0; g],
            s1xc: vec![0.0; g * p],
            a: vec![0.0; dim],
        }
    }

    /// Partial log-likelihood (Breslow ties), score and information at
    /// `(beta, u)`. `u` is ignored unless the sweep was built with frailty.
    pub fn run(&mut self, prob: &Problem, beta: &[f64], u: &[f64], want_info: bool) -> bool {
        let p = prob.p;
        let g = prob.g;
        let dim = self.dim;
        self.pl = 0.0;
        self.sum_d_log_d = 0.0;
        self.grad.iter_mut().for_each(|v| *v = 0.0);
        if want_info {
            self.info.iter_mut().for_each(|v| *v = 0.0);
        }
        self.expected.iter_mut().for_each(|v| *v = 0.0);
        self.s1x.iter_mut().for_each(|v| *v = 0.0);
        self.s2x.iter_mut().for_each(|v| *v = 0.0);
        self.s0c.iter_mut().for_each(|v| *v = 0.0);
        self.s1xc.iter_mut().for_each(|v| *v = 0.0);

        for i in 0..prob.n() {
            let xi = &prob.x[i * p..(i + 1) * p];
            let mut eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            if self.frailty {
                eta += u[prob.cluster[i]];
            }
            self.eta[i] = eta;
        }

        let mut s0 = 0.0;
        for &(lo, hi) in &prob.blocks {
            for &i in &prob.order[lo..hi] {
                let w = self.eta[i].exp();
                let xi = &prob.x[i * p..(i + 1) * p];
                s0 += w;
                for a in 0..p {
                    let wa = w * xi[a];
                    self.s1x[a] += wa;
                    if want_info {
                        for b in a..p {
                            self.s2x[a * p + b] += wa * xi[b];
                        }
                    }
                }
                if self.frailty {
                    let c = prob.cluster[i];
                    self.s0c[c] += w;
                    if want_info {
                        for a in 0..p {
                            self.s1xc[c * p + a] += w * xi[a];
                        }
                    }
                }
            }
            let mut dk = 0usize;
            for &i in &prob.order[lo..hi] {
                if prob.event[i] {
                    dk += 1;
                    self.pl += self.eta[i];
                    let xi = &prob.x[i * p..(i + 1) * p];
                    for a in 0..p {
                        self.grad[a] += xi[a];
                    }
                    if self.frailty {
                        self.grad[p + prob.cluster[i]] += 1.0;
                    }
                }
            }
            if dk == 0 {
                continue;
            }
            let d = dk as f64;
            self.pl -= d * s0.ln();
            self.sum_d_log_d += d * d.ln();
            for a in 0..p {
                self.a[a] = self.s1x[a] / s0;
                self.grad[a] -= d * self.a[a];
            }
            for c in 0..g {
                let share = self.s0c[c] / s0;
                self.expected[c] += d * share;
                if self.frailty {
                    self.a[p + c] = share;
                    self.grad[p + c] -= d * share;
                }
            }
            if want_info {
                // Second moments over the risk set, then minus the outer
                // product of first moments.
                for r in 0..p {
                    for s in r..p {
                        self.info[r * dim + s] += d * self.s2x[r * p + s] / s0;
                    }
                }
                if self.frailty {
                    for c in 0..g {
                        for r in 0..p {
                            self.info[r * dim + p + c] += d * self.s1xc[c * p + r] / s0;
                        }
                        self.info[(p + c) * dim + p + c] += d * self.a[p + c];
                    }
                }
                for r in 0..dim {
                    let ar = d * self.a[r];
                    if ar == 0.0 {
                        continue;
                    }
                    let row = &mut self.info[r * dim..(r + 1) * dim];
                    for s in r..dim {
                        row[s] -= ar * self.a[s];
                    }
                }
            }
        }
        if want_info {
            for r in 0..dim {
                for s in 0..r {
                    self.info[r * dim + s] = self.info[s * dim + r];
                }
            }
        }
        self.pl.is_finite()
    }
}

/// Solve `info * step = grad` by Cholesky; `None` when not positive definite.
pub(crate) fn newton_step(info: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
    let dim = grad.len();
    if dim == 0 {
        return Some(Vec::new());
    }
    let m = DMatrix::from_row_slice(dim, dim, info);
    let chol = m.cholesky()?;
    let step = chol.solve(&DVector::from_column_slice(grad));
    step.iter().all(|v| v.is_finite()).then(|| step.iter().copied().collect())
}

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(info: &[f64], dim: usize) -> Option<Vec<f64>> {
    if dim == 0 {
        return Some(Vec::new());
    }
    let m = DMatrix::from_row_slice(dim, dim, info);
    let inv = m.cholesky()?.inverse();
    Some(inv.transpose().as_slice().to_vec())
}
