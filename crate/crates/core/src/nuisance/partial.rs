//! Weighted Cox-type partial likelihood with Breslow ties.
//!
//! The risk structure covers both the ordinary Cox risk set (weight 1 while
//! `T~_j >= t`) and the Fine-Gray subdistribution risk set, where subjects
//! that failed from the competing cause stay at risk with an IPCW weight.
//! Subject `j` has weight 1 on the first `unit_len[j]` grid points and the
//! weights of its optional tail afterwards.

use crate::error::{Error, Result};

use super::linalg::solve_spd;

pub(crate) struct Tail {
    pub subject: usize,
    pub start: usize,
    pub weights: Vec<f64>,
}

pub(crate) struct RiskProblem {
    pub n: usize,
    pub p: usize,
    /// Row-major `n x p` design.
    pub x: Vec<f64>,
    /// Distinct event times.
    pub grid: Vec<f64>,
    /// Event count at each grid time.
    pub d: Vec<f64>,
    /// Sum of design rows over event subjects.
    pub event_x_sum: Vec<f64>,
    /// Per subject: number of leading grid points with weight 1.
    pub unit_len: Vec<usize>,
    pub tails: Vec<Tail>,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Observed information, row-major `p x p`; empty unless requested.
    pub info: Vec<f64>,
    /// Weighted risk-set sums `S0(t_k)` on the natural scale.
    pub s0: Vec<f64>,
}

impl RiskProblem {
    /// Build from per-subject event flags, times and risk structure.
    pub fn new(
        x: Vec<f64>,
        p: usize,
        times: &[f64],
        is_event: &[bool],
        grid: Vec<f64>,
        unit_len: Vec<usize>,
        tails: Vec<Tail>,
    ) -> Self {
        let n = times.len();
        let mut d = vec![0.0; grid.len()];
        let mut event_x_sum = vec![0.0; p];
        for j in 0..n {
            if is_event[j] {
                let k = grid
                    .binary_search_by(|g| g.total_cmp(&times[j]))
                    .expect("event time on grid");
                d[k] += 1.0;
                for c in 0..p {
                    event_x_sum[c] += x[j * p + c];
                }
            }
        }
        RiskProblem {
            n,
            p,
            x,
            grid,
            d,
            event_x_sum,
            unit_len,
            tails,
        }
    }

    #[inline]
    fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.p..(j + 1) * self.p]
    }

    pub fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.row(j).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn evaluate(&self, beta: &[f64], want_info: bool) -> Evaluation {
        let (p, kk) = (self.p, self.grid.len());
        let eta = self.linear_predictors(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let e: Vec<f64> = eta.iter().map(|v| (v - shift).exp()).collect();

        // Unit part: bucket by last covered grid index, then reverse cumsum.
        let mut s0 = vec![0.0; kk];
        let mut s1 = vec![0.0; kk * p];
        for j in 0..self.n {
            let u = self.unit_len[j];
            if u == 0 {
                continue;
            }
            let k = u - 1;
            s0[k] += e[j];
            let row = self.row(j);
            for c in 0..p {
                s1[k * p + c] += e[j] * row[c];
            }
        }
        for k in (0..kk.saturating_sub(1)).rev() {
            s0[k] += s0[k + 1];
            for c in 0..p {
                s1[k * p + c] += s1[(k + 1) * p + c];
            }
        }
        for tail in &self.tails {
            let ej = e[tail.subject];
            let row = self.row(tail.subject);
            for (off, w) in tail.weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let k = tail.start + off;
                let c0 = w * ej;
                s0[k] += c0;
                for c in 0..p {
                    s1[k * p + c] += c0 * row[c];
                }
            }
        }

        let mut loglik: f64 = self.event_x_sum.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mut score = self.event_x_sum.clone();
        for k in 0..kk {
            if self.d[k] == 0.0 {
                continue;
            }
            loglik -= self.d[k] * (s0[k].ln() + shift);
            for c in 0..p {
                score[c] -= self.d[k] * s1[k * p + c] / s0[k];
            }
        }

        let mut info = Vec::new();
        if want_info && p > 0 {
            info = vec![0.0; p * p];
            // sum_k d_k S2_k / S0_k = sum_j c_j x_j x_j^T
            let r: Vec<f64> = (0..kk).map(|k| self.d[k] / s0[k]).collect();
            let mut prefix = vec![0.0; kk];
            let mut acc = 0.0;
            for k in 0..kk {
                acc += r[k];
                prefix[k] = acc;
            }
            let mut cj: Vec<f64> = (0..self.n)
                .map(|j| {
                    let u = self.unit_len[j];
                    if u == 0 {
                        0.0
                    } else {
                        e[j] * prefix[u - 1]
                    }
                })
                .collect();
            for tail in &self.tails {
                let s: f64 = tail
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(off, w)| w * r[tail.start + off])
                    .sum();
                cj[tail.subject] += e[tail.subject] * s;
            }
            for j in 0..self.n {
                if cj[j] == 0.0 {
                    continue;
                }
                let row = self.row(j);
                for a in 0..p {
                    let ca = cj[j] * row[a];
                    for b in a..p {
                        info[a * p + b] += ca * row[b];
                    }
                }
            }
            for k in 0..kk {
                if self.d[k] == 0.0 {
                    continue;
                }
                let xbar = &s1[k * p..(k + 1) * p];
                let scale = self.d[k] / (s0[k] * s0[k]);
                for a in 0..p {
                    for b in a..p {
                        info[a * p + b] -= scale * xbar[a] * xbar[b];
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    info[a * p + b] = info[b * p + a];
                }
            }
        }

        let scale = (-shift).exp();
        Evaluation {
            loglik,
            score,
            info,
            s0: s0.into_iter().map(|v| v / scale).collect(),
        }
    }

    /// Newton-Raphson with step halving. Converged when the max-norm of the
    /// score drops below `tol` or the step becomes negligible.
    pub fn newton(&self, start: Vec<f64>, tol: f64, max_iter: usize, what: &'static str) -> Result<(Vec<f64>, usize)> {
        let p = self.p;
        let mut beta = start;
        if p == 0 {
            return Ok((beta, 0));
        }
        let mut ev = self.evaluate(&beta, true);
        for iter in 0..max_iter {
            let max_score = ev.score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
            if max_score < tol {
                return Ok((beta, iter));
            }
            let step = solve_spd(&ev.info, p, &ev.score).ok_or(Error::RankDeficient)?;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let cev = self.evaluate(&cand, true);
                if cev.loglik.is_finite() && cev.loglik >= ev.loglik - 1e-12 * ev.loglik.abs().max(1.0) {
                    accepted = Some((cand, cev));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cev)) = accepted else {
                return Err(Error::NonConvergence {
                    what,
                    iterations: iter,
                    last: beta,
                });
            };
            let max_step = step.iter().fold(0.0_f64, |m, s| m.max((t * s).abs()));
            beta = cand;
            ev = cev;
            if beta.iter().any(|b| b.abs() > 50.0) {
                return Err(Error::NonConvergence {
                    what,
                    iterations: iter + 1,
                    last: beta,
                });
            }
            if max_step < 1e-12 {
                return Ok((beta, iter + 1));
            }
        }
        let max_score = ev.score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if max_score < tol {
            return Ok((beta, max_iter));
        }
        Err(Error::NonConvergence {
            what,
            iterations: max_iter,
            last: beta,
        })
    }

    /// Breslow increments `d_k / S0_k(beta)` at each grid time.
    pub fn breslow(&self, beta: &[f64]) -> Vec<f64> {
        let ev = self.evaluate(beta, false);
        self.d.iter().zip(&ev.s0).map(|(d, s)| d / s).collect()
    }
}
