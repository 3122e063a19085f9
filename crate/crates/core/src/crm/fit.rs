//! Constrained history matching.
//!
//! Parameters are mapped onto the unit cube (time constants on a log scale)
//! and minimized with a projected Levenberg-Marquardt iteration using
//! forward-difference Jacobians. Every iterate is projected back onto the
//! feasible set, so the bounds and the per-injector gain-sum constraint hold
//! exactly rather than through a penalty. A projected-gradient step with
//! backtracking takes over when the damped Gauss-Newton step stalls against
//! active constraints.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{initial_split, simulate_unchecked, CrmError, CrmParameters, FitConfig, MatchWindow};
use crate::ingest::FieldData;
use crate::linalg::{cholesky, cholesky_solve, SymMatrix};

const SLOT_GAIN: usize = 0;
const SLOT_TAU: usize = 1;
const SLOT_Q0: usize = 2;
const SLOT_J: usize = 3;

struct Problem<'a> {
    ni: usize,
    np: usize,
    slots: usize,
    len: usize,
    injections: Vec<Vec<f64>>,
    pressures: Option<Vec<Vec<f64>>>,
    observed: Vec<&'a [f64]>,
    tau_lo: f64,
    tau_ratio_ln: f64,
    q0_max: Vec<f64>,
    j_max: f64,
    injectors: &'a [String],
    producers: &'a [String],
    /// Residual scaling so that the squared residual norm equals the squared
    /// objective.
    weight: f64,
}

impl<'a> Problem<'a> {
    fn dim(&self) -> usize {
        self.ni * self.np * self.slots
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, slot: usize) -> usize {
        (i * self.np + j) * self.slots + slot
    }

    fn decode(&self, z: &[f64]) -> CrmParameters {
        let (ni, np) = (self.ni, self.np);
        let mat = |slot: usize, map: &dyn Fn(usize, f64) -> f64| -> Vec<Vec<f64>> {
            (0..ni)
                .map(|i| (0..np).map(|j| map(j, z[self.idx(i, j, slot)])).collect())
                .collect()
        };
        CrmParameters {
            injectors: self.injectors.to_vec(),
            producers: self.producers.to_vec(),
            gains: mat(SLOT_GAIN, &|_, v| v),
            taus: mat(SLOT_TAU, &|_, v| self.tau_lo * (v * self.tau_ratio_ln).exp()),
            productivity: (self.slots > SLOT_J).then(|| mat(SLOT_J, &|_, v| v * self.j_max)),
            initial_rates: mat(SLOT_Q0, &|j, v| v * self.q0_max[j]),
        }
    }

    fn encode(&self, p: &CrmParameters) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        for i in 0..self.ni {
            for j in 0..self.np {
                z[self.idx(i, j, SLOT_GAIN)] = p.gains[i][j];
                let tau = p.taus[i][j].max(self.tau_lo);
                z[self.idx(i, j, SLOT_TAU)] = (tau / self.tau_lo).ln() / self.tau_ratio_ln;
                z[self.idx(i, j, SLOT_Q0)] = p.initial_rates[i][j] / self.q0_max[j];
                if self.slots > SLOT_J {
                    let jv = p.productivity.as_ref().map_or(0.0, |m| m[i][j]);
                    z[self.idx(i, j, SLOT_J)] = if self.j_max > 0.0 { jv / self.j_max } else { 0.0 };
                }
            }
        }
        self.project(&mut z);
        z
    }

    /// Euclidean projection onto the unit box intersected with
    /// `Σ_j f_ij ≤ 1` for every injector.
    fn project(&self, z: &mut [f64]) {
        for v in z.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        let mut row = vec![0.0; self.np];
        for i in 0..self.ni {
            for j in 0..self.np {
                row[j] = z[self.idx(i, j, SLOT_GAIN)];
            }
            if row.iter().sum::<f64>() > 1.0 {
                project_simplex(&mut row);
                for j in 0..self.np {
                    z[self.idx(i, j, SLOT_GAIN)] = row[j];
                }
            }
        }
    }

    fn residuals(&self, z: &[f64], out: &mut Vec<f64>) {
        let params = self.decode(z);
        let sim = simulate_unchecked(&params, &self.injections, self.pressures.as_deref(), self.len);
        out.clear();
        for (j, s) in sim.iter().enumerate() {
            out.extend(s.iter().zip(self.observed[j]).map(|(a, b)| (a - b) * self.weight));
        }
    }

    fn cost(&self, z: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.residuals(z, buf);
        buf.iter().map(|r| r * r).sum()
    }
}

/// Projection onto the probability simplex `{x ≥ 0, Σx = 1}`.
fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    let sum: f64 = v.iter().sum();
    if sum > 1.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
}

struct Outcome {
    z: Vec<f64>,
    cost: f64,
    iterations: usize,
}

fn minimize(problem: &Problem, z0: Vec<f64>, config: &FitConfig) -> Outcome {
    let d = problem.dim();
    let h = config.finite_diff_step;
    let mut z = z0;
    problem.project(&mut z);
    let mut r = Vec::new();
    let mut cost = problem.cost(&z, &mut r);
    if !cost.is_finite() {
        return Outcome {
            z,
            cost,
            iterations: 0,
        };
    }
    let m = r.len();
    let mut jac = vec![0.0; m * d]; // column-major: jac[c * m + row]
    let mut scratch = Vec::with_capacity(m);
    let mut mu = 1e-3;
    let mut stalls = 0;
    let mut iterations = 0;

    while iterations < config.optimizer_max_iters && cost > 1e-28 {
        iterations += 1;
        // forward differences, stepping inward at the upper bound
        for c in 0..d {
            let mut zp = z.clone();
            let step = if zp[c] + h <= 1.0 { h } else { -h };
            zp[c] += step;
            problem.residuals(&zp, &mut scratch);
            let col = &mut jac[c * m..(c + 1) * m];
            for (k, (a, b)) in scratch.iter().zip(&r).enumerate() {
                col[k] = (a - b) / step;
            }
        }
        let mut jtj = SymMatrix::zeros(d);
        let mut grad = vec![0.0; d];
        for a in 0..d {
            let ca = &jac[a * m..(a + 1) * m];
            grad[a] = ca.iter().zip(&r).map(|(x, y)| x * y).sum();
            for b in 0..=a {
                let cb = &jac[b * m..(b + 1) * m];
                let v: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                jtj.data[a * d + b] = v;
                jtj.data[b * d + a] = v;
            }
        }
        let max_diag = (0..d).map(|a| jtj.get(a, a)).fold(0.0, f64::max);
        if max_diag == 0.0 {
            break;
        }

        // projected-gradient stationarity
        let mut zg: Vec<f64> = z.iter().zip(&grad).map(|(v, g)| v - g / max_diag).collect();
        problem.project(&mut zg);
        let pg_norm: f64 = zg.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if pg_norm < 1e-14 {
            break;
        }

        let mut accepted = None;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for k in 0..d {
                let dk = jtj.get(k, k).max(1e-9 * max_diag);
                a.add(k, k, mu * dk);
            }
            if let Some(l) = cholesky(&a, 1e-15) {
                let mut step: Vec<f64> = grad.iter().map(|g| -g).collect();
                cholesky_solve(&l, &mut step);
                let mut cand: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + b).collect();
                problem.project(&mut cand);
                let c = problem.cost(&cand, &mut scratch);
                if c < cost {
                    accepted = Some((cand, c));
                    mu = (mu / 3.0).max(1e-12);
                    break;
                }
            }
            mu *= 4.0;
        }
        if accepted.is_none() {
            // backtracking projected gradient
            let mut alpha = 1.0 / max_diag;
            for _ in 0..40 {
                let mut cand: Vec<f64> = z.iter().zip(&grad).map(|(v, g)| v - alpha * g).collect();
                problem.project(&mut cand);
                let c = problem.cost(&cand, &mut scratch);
                if c < cost {
                    accepted = Some((cand, c));
                    break;
                }
                alpha *= 0.5;
            }
            mu = 1e-3;
        }
        let Some((cand, c)) = accepted else { break };
        let decrease = cost - c;
        z = cand;
        cost = problem.cost(&z, &mut r);
        debug_assert!((cost - c).abs() <= 1e-12 * c.max(1.0));
        if decrease <= config.convergence_tol * cost.max(1e-300) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Outcome { z, cost, iterations }
}

/// Latin-hypercube points in the unit cube.
fn latin_hypercube(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for c in 0..d {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            p[c] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

/// History-matches CRM parameters on `window`.
///
/// Starts from `init` (when given) plus Latin-hypercube restarts; the pair
/// initial rates of generated starts split the observed producer rate on the
/// first window day equally across injectors. Returns the best restart.
pub fn fit_window(
    field: &FieldData,
    window: &MatchWindow,
    config: &FitConfig,
    init: Option<&CrmParameters>,
) -> Result<CrmParameters, CrmError> {
    config.validate()?;
    window.check(field.len())?;
    let len = window.train_len();
    if len < config.min_window_days {
        return Err(CrmError::WindowTooShort {
            len,
            min: config.min_window_days,
        });
    }
    let (ni, np) = (field.injectors.len(), field.producers.len());
    if np == 0 {
        return Err(CrmError::InvalidWindow("field has no producers".into()));
    }
    if let Some(p) = init {
        p.validate()?;
        if p.producers != field.producers || p.injectors != field.injectors {
            return Err(CrmError::InvalidParameters("initial guess wells differ from the field".into()));
        }
    }
    let (s, e) = (window.train_start, window.train_end);
    let bhp = config.use_bhp && field.pressure.is_some() && ni > 0;
    let observed: Vec<&[f64]> = field.oil.iter().map(|o| &o[s..e]).collect();
    let q0_max: Vec<f64> = observed
        .iter()
        .map(|o| 2.0 * o.iter().copied().fold(1.0, f64::max))
        .collect();
    let problem = Problem {
        ni,
        np,
        slots: if bhp { 4 } else { 3 },
        len,
        injections: field.injection_span(s..e),
        pressures: if bhp { super::pressure_span(field, s, len) } else { None },
        observed,
        tau_lo: config.tau_bounds.0,
        tau_ratio_ln: (config.tau_bounds.1 / config.tau_bounds.0).ln(),
        q0_max,
        j_max: config.productivity_max,
        injectors: &field.injectors,
        producers: &field.producers,
        weight: 1.0 / (len as f64).sqrt(),
    };
    if ni == 0 {
        // no injectors: nothing to fit, producers simulate as zero
        return Ok(problem.decode(&[]));
    }

    let start_rates: Vec<f64> = field.oil.iter().map(|o| o[s]).collect();
    let q0 = initial_split(&start_rates, ni);
    let default_start = {
        let mut z = vec![0.0; problem.dim()];
        for i in 0..ni {
            for j in 0..np {
                z[problem.idx(i, j, SLOT_GAIN)] = 0.5 / np as f64;
                z[problem.idx(i, j, SLOT_TAU)] = 0.5;
                z[problem.idx(i, j, SLOT_Q0)] = q0[i][j] / problem.q0_max[j];
            }
        }
        z
    };
    let mut starts = vec![match init {
        Some(p) => problem.encode(p),
        None => default_start,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for mut z in latin_hypercube(config.restarts - 1, problem.dim(), &mut rng) {
        for i in 0..ni {
            for j in 0..np {
                z[problem.idx(i, j, SLOT_Q0)] = q0[i][j] / problem.q0_max[j];
            }
        }
        problem.project(&mut z);
        starts.push(z);
    }

    let outcomes: Vec<Outcome> = starts
        .into_par_iter()
        .map(|z| minimize(&problem, z, config))
        .collect();
    let best = outcomes
        .iter()
        .filter(|o| o.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost));
    let Some(best) = best else {
        let o = &outcomes[0];
        return Err(CrmError::OptimizerDiverged {
            iteration: o.iterations,
            value: o.cost,
        });
    };
    let params = problem.decode(&best.z);
    params.validate()?;
    Ok(params)
}
