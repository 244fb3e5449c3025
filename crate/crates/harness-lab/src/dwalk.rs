//! The auxiliary difference walk and its closed-form variance integrals.
//!
//! Two coupled backward walks differ by a Markov jump process `D` on `Z^d`:
//! away from the origin it jumps by `o` at rate `p(0,o) + p(0,-o)`; at the
//! origin both walks ring together, so the increment law is the convolution
//! `q0(j) = sum_k p(0,k) p(0,k+j)` fired at rate 1, with the self-mass at 0
//! acting as a no-op. The occupation time of `D` at the origin gives exact
//! window variances for the height process (for unit noise scale; multiply by
//! `sigma^2` otherwise).
//!
//! Two independent backends evaluate the law: Monte Carlo chains, and
//! uniformization of the truncated chain with a certified leakage bound.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Kernel, Site};
use crate::rng;

/// Jump-rate tables of the difference walk in its two regimes.
#[derive(Debug, Clone)]
pub struct DWalkLaw {
    d: usize,
    range: i32,
    /// Off-origin increments with their rates `p(0,o)+p(0,-o)`, zero offset
    /// excluded; the total is the off-origin exit rate.
    off_site: Vec<(Site, f64)>,
    off_rate: f64,
    /// At-origin increment law `q0`, self-mass included; sums to 1.
    at_origin: Vec<(Site, f64)>,
    /// Effective exit rate at the origin, `1 - q0(0)`.
    origin_exit_rate: f64,
}

impl DWalkLaw {
    pub fn new(kernel: &Kernel) -> Result<Self> {
        kernel.validate()?;
        let d = kernel.dimension();
        let zero = vec![0i32; d];
        let mut off: BTreeMap<Site, f64> = BTreeMap::new();
        let mut off_self = 0.0;
        for (o, p) in kernel.offsets() {
            let neg: Site = o.iter().map(|c| -c).collect();
            let rate = p + kernel.weight(&neg);
            if *o == zero {
                off_self = 2.0 * p;
            } else {
                off.insert(o.clone(), rate);
            }
        }
        let off_rate = 2.0 - off_self;
        // q0(j) = sum_k p(0,k) p(0,k+j) <=> increment eps' - eps of two
        // independent kernel draws
        let mut q0: BTreeMap<Site, f64> = BTreeMap::new();
        for (a, pa) in kernel.offsets() {
            for (b, pb) in kernel.offsets() {
                let j: Site = b.iter().zip(a).map(|(x, y)| x - y).collect();
                *q0.entry(j).or_insert(0.0) += pa * pb;
            }
        }
        let self_mass = q0.get(&zero).copied().unwrap_or(0.0);
        Ok(DWalkLaw {
            d,
            range: 2 * kernel.range(),
            off_site: off.into_iter().collect(),
            off_rate,
            at_origin: q0.into_iter().collect(),
            origin_exit_rate: 1.0 - self_mass,
        })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Maximum max-norm of a single jump.
    pub fn range(&self) -> i32 {
        self.range
    }

    pub fn off_rate(&self) -> f64 {
        self.off_rate
    }

    pub fn origin_exit_rate(&self) -> f64 {
        self.origin_exit_rate
    }
}

/// Regime-appropriate rate table at `state`: off the origin, jump rates; at
/// the origin, a probability law (self-mass included) fired at rate 1.
pub fn d_jump_distribution(law: &DWalkLaw, state: &[i32]) -> BTreeMap<Site, f64> {
    if state.iter().all(|&c| c == 0) {
        law.at_origin.iter().cloned().collect()
    } else {
        law.off_site.iter().cloned().collect()
    }
}

/// Evaluation backend choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Mc { replicas: usize, seed: u64 },
    Uniformization { trunc_radius: Option<i32>, tol: f64 },
}

/// A value with an uncertainty radius: a 1-sigma standard error for Monte
/// Carlo, a certified leakage bound for uniformization.
#[derive(Debug, Clone, Copy)]
pub struct Evaluated {
    pub value: f64,
    pub radius: f64,
}

// ---------------------------------------------------------------------------
// uniformization backend
// ---------------------------------------------------------------------------

/// Transient distribution of the truncated walk, as the sequence of powers of
/// the uniformized discrete chain applied to a start state. Escaping mass is
/// routed to an absorbing "lost" state, so every reading carries a certified
/// error bound.
pub struct UniformizedWalk {
    lambda: f64,
    /// Probability at the origin after k discrete steps.
    origin_k: Vec<f64>,
    /// Probability lost to truncation after k discrete steps (nondecreasing).
    lost_k: Vec<f64>,
    tol: f64,
}

fn default_radius(range: i32, horizon: f64) -> i32 {
    let v = range as f64;
    (v * (horizon + 6.0 * horizon.sqrt()) + v).ceil() as i32
}

impl UniformizedWalk {
    /// Prepare the chain started at `start` with enough discrete steps to
    /// cover continuous times up to `horizon`.
    pub fn new(
        law: &DWalkLaw,
        start: &[i32],
        horizon: f64,
        trunc_radius: Option<i32>,
        tol: f64,
    ) -> Result<Self> {
        if start.len() != law.d {
            return Err(Error::SchemaError(format!(
                "start site {start:?} has wrong dimension (expected {})",
                law.d
            )));
        }
        let radius = trunc_radius.unwrap_or_else(|| default_radius(law.range, horizon));
        let lambda = law.off_rate.max(law.origin_exit_rate).max(1e-300);
        let mean = lambda * horizon;
        let steps = (mean + 10.0 * mean.sqrt() + 30.0).ceil() as usize;

        let side = (2 * radius + 1) as usize;
        let n_states: usize = side.pow(law.d as u32);
        let decode_strides: Vec<usize> = (0..law.d)
            .map(|a| side.pow((law.d - 1 - a) as u32))
            .collect();
        let index_of = |site: &[i32]| -> Option<usize> {
            let mut idx = 0usize;
            for (a, &c) in site.iter().enumerate() {
                if c.abs() > radius {
                    return None;
                }
                idx += (c + radius) as usize * decode_strides[a];
            }
            Some(idx)
        };
        // per-state transition rows of the uniformized chain, as index deltas
        // would not work near the boundary, so precompute target indices
        let origin_idx = index_of(&vec![0; law.d]).expect("origin inside box");
        let start_idx = index_of(start).ok_or(Error::TruncationTooSmall {
            leakage: 1.0,
            tol,
        })?;

        // precompute, for each offset, the raw index delta and the coordinate
        // change, validating bounds per state via coordinates
        let mut coords = vec![0i32; law.d];
        let decode = |mut idx: usize, coords: &mut [i32]| {
            for a in 0..law.d {
                coords[a] = (idx / decode_strides[a]) as i32 - radius;
                idx %= decode_strides[a];
            }
        };

        let mut cur = vec![0.0f64; n_states];
        let mut lost = 0.0f64;
        cur[start_idx] = 1.0;
        let mut origin_k = Vec::with_capacity(steps + 1);
        let mut lost_k = Vec::with_capacity(steps + 1);
        origin_k.push(cur[origin_idx]);
        lost_k.push(lost);

        let off_stay = 1.0 - law.off_rate / lambda;
        let origin_stay = 1.0 - law.origin_exit_rate / lambda;
        let off_moves: Vec<(&Site, f64)> = law
            .off_site
            .iter()
            .map(|(o, r)| (o, r / lambda))
            .collect();
        let origin_moves: Vec<(&Site, f64)> = law
            .at_origin
            .iter()
            .filter(|(o, _)| o.iter().any(|&c| c != 0))
            .map(|(o, q)| (o, q / lambda))
            .collect();

        let mut next = vec![0.0f64; n_states];
        for _ in 0..steps {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (idx, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                decode(idx, &mut coords);
                let (stay, moves) = if idx == origin_idx {
                    (origin_stay, &origin_moves)
                } else {
                    (off_stay, &off_moves)
                };
                next[idx] += stay * mass;
                for &(o, p) in moves.iter() {
                    let mut inside = true;
                    let mut tgt = 0usize;
                    for (a, (&c, &dc)) in coords.iter().zip(o.iter()).enumerate() {
                        let nc = c + dc;
                        if nc.abs() > radius {
                            inside = false;
                            break;
                        }
                        tgt += (nc + radius) as usize * decode_strides[a];
                    }
                    if inside {
                        next[tgt] += p * mass;
                    } else {
                        lost += p * mass;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            origin_k.push(cur[origin_idx]);
            lost_k.push(lost);
        }
        Ok(UniformizedWalk {
            lambda,
            origin_k,
            lost_k,
            tol,
        })
    }

    /// Poisson(lambda*u) pmf over 0..=K, plus the mass beyond K.
    fn poisson_pmf(&self, u: f64) -> (Vec<f64>, f64) {
        let lam = self.lambda * u;
        let k_max = self.origin_k.len() - 1;
        let mut pmf = vec![0.0; k_max + 1];
        if lam == 0.0 {
            pmf[0] = 1.0;
            return (pmf, 0.0);
        }
        // recurrence anchored at the mode for stability
        let mode = (lam.floor() as usize).min(k_max);
        let ln_pmf_mode = mode as f64 * lam.ln()
            - lam
            - statrs::function::gamma::ln_gamma(mode as f64 + 1.0);
        pmf[mode] = ln_pmf_mode.exp();
        for k in (0..mode).rev() {
            pmf[k] = pmf[k + 1] * (k as f64 + 1.0) / lam;
        }
        for k in mode + 1..=k_max {
            pmf[k] = pmf[k - 1] * lam / k as f64;
        }
        let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
        (pmf, tail)
    }

    /// `P(D_u = 0)` with its certified truncation error.
    pub fn occupancy(&self, u: f64) -> Result<Evaluated> {
        let (pmf, tail) = self.poisson_pmf(u);
        let mut value = 0.0;
        let mut leak = tail;
        for (k, &p) in pmf.iter().enumerate() {
            value += p * self.origin_k[k];
            leak += p * self.lost_k[k];
        }
        if leak > self.tol {
            return Err(Error::TruncationTooSmall {
                leakage: leak,
                tol: self.tol,
            });
        }
        Ok(Evaluated {
            value,
            radius: leak,
        })
    }

    /// Exact occupation-time integral `int_0^tau P(D_u = 0) du` via the
    /// identity `int_0^tau pmf(k; lambda u) du = P(Pois(lambda tau) >= k+1) / lambda`.
    pub fn integral(&self, tau: f64) -> Result<Evaluated> {
        let (pmf, tail) = self.poisson_pmf(tau);
        // upper tails P(N >= k+1) by suffix summation
        let k_max = pmf.len() - 1;
        let mut upper = vec![0.0; pmf.len()];
        let mut acc = tail;
        for k in (0..=k_max).rev() {
            acc += pmf[k];
            upper[k] = (acc - pmf[k]).max(0.0) + pmf[k]; // P(N >= k) numerically
        }
        // shift: need P(N >= k+1)
        let mut value = 0.0;
        let mut leak_rate = 0.0;
        for k in 0..=k_max {
            let tail_k1 = if k + 1 <= k_max { upper[k + 1] } else { tail };
            value += self.origin_k[k] * tail_k1;
            leak_rate += self.lost_k[k] * tail_k1;
        }
        value /= self.lambda;
        // leaked mass could have been sitting at the origin the whole time
        let leak = leak_rate / self.lambda + tail * tau;
        if leak > self.tol * tau.max(1.0) {
            return Err(Error::TruncationTooSmall {
                leakage: leak,
                tol: self.tol * tau.max(1.0),
            });
        }
        Ok(Evaluated {
            value,
            radius: leak,
        })
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo backend
// ---------------------------------------------------------------------------

fn sample_exp(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate <= 0.0 {
        f64::INFINITY
    } else {
        let u: f64 = rng.random_range(0.0_f64..1.0);
        -(1.0 - u).ln() / rate
    }
}

fn pick<'a>(moves: &'a [(Site, f64)], total: f64, rng: &mut impl Rng) -> &'a Site {
    let u: f64 = rng.random_range(0.0..total);
    let mut acc = 0.0;
    for (o, r) in moves {
        acc += r;
        if u < acc {
            return o;
        }
    }
    &moves[moves.len() - 1].0
}

/// One chain run: time spent at the origin within `(lo_i, hi_i]` for every
/// requested interval, plus the origin indicators at the probe times.
fn run_chain(
    law: &DWalkLaw,
    start: &[i32],
    horizon: f64,
    probes: &[f64],
    intervals: &[(f64, f64)],
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<bool>) {
    let origin_moves: Vec<(Site, f64)> = law
        .at_origin
        .iter()
        .filter(|(o, _)| o.iter().any(|&c| c != 0))
        .cloned()
        .collect();
    let origin_move_rate: f64 = origin_moves.iter().map(|&(_, r)| r).sum();
    let mut pos = start.to_vec();
    let mut t = 0.0;
    let mut occ = vec![0.0; intervals.len()];
    let mut at = vec![false; probes.len()];
    let mut probe_idx = 0;
    while t < horizon {
        let at_origin = pos.iter().all(|&c| c == 0);
        let (rate, moves, total) = if at_origin {
            (law.origin_exit_rate, &origin_moves, origin_move_rate)
        } else {
            (law.off_rate, &law.off_site, law.off_rate)
        };
        let dt = sample_exp(rate, rng);
        let t_next = (t + dt).min(horizon);
        if at_origin {
            for (k, &(lo, hi)) in intervals.iter().enumerate() {
                let a = t.max(lo);
                let b = t_next.min(hi);
                if b > a {
                    occ[k] += b - a;
                }
            }
        }
        while probe_idx < probes.len() && probes[probe_idx] <= t_next {
            at[probe_idx] = at_origin;
            probe_idx += 1;
        }
        if t + dt >= horizon {
            break;
        }
        t += dt;
        let o = pick(moves, total, rng);
        for (c, dc) in pos.iter_mut().zip(o) {
            *c += dc;
        }
    }
    while probe_idx < probes.len() {
        // horizon reached exactly; state persists
        at[probe_idx] = pos.iter().all(|&c| c == 0);
        probe_idx += 1;
    }
    (occ, at)
}

/// Monte Carlo means and standard errors of the origin occupation time on
/// each `interval` and the origin indicator at each probe time, from
/// `replicas` independent chains started at `start`.
pub fn mc_profile(
    law: &DWalkLaw,
    start: &[i32],
    probes: &[f64],
    intervals: &[(f64, f64)],
    replicas: usize,
    seed: u64,
) -> (Vec<Evaluated>, Vec<Evaluated>) {
    let horizon = probes
        .iter()
        .copied()
        .chain(intervals.iter().map(|&(_, hi)| hi))
        .fold(0.0_f64, f64::max);
    let sums: (Vec<f64>, Vec<f64>, Vec<f64>) = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream_rng(seed, r as u64);
            let (occ, at) = run_chain(law, start, horizon, probes, intervals, &mut rng);
            let hits: Vec<f64> = at.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let occ2: Vec<f64> = occ.iter().map(|&x| x * x).collect();
            (occ, occ2, hits)
        })
        .reduce(
            || {
                (
                    vec![0.0; intervals.len()],
                    vec![0.0; intervals.len()],
                    vec![0.0; probes.len()],
                )
            },
            |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(&b.0) {
                    *x += y;
                }
                for (x, y) in a.1.iter_mut().zip(&b.1) {
                    *x += y;
                }
                for (x, y) in a.2.iter_mut().zip(&b.2) {
                    *x += y;
                }
                a
            },
        );
    let n = replicas as f64;
    let interval_est = sums
        .0
        .iter()
        .zip(&sums.1)
        .map(|(&s, &s2)| {
            let mean = s / n;
            let var = ((s2 - s * s / n) / (n - 1.0)).max(0.0);
            Evaluated {
                value: mean,
                radius: (var / n).sqrt(),
            }
        })
        .collect();
    let probe_est = sums
        .2
        .iter()
        .map(|&h| {
            let p = h / n;
            Evaluated {
                value: p,
                radius: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect();
    (interval_est, probe_est)
}

// ---------------------------------------------------------------------------
// the four standard queries
// ---------------------------------------------------------------------------

/// `P(D^start_u = 0)`.
pub fn occupancy_probability(
    law: &DWalkLaw,
    start: &[i32],
    u: f64,
    backend: Backend,
) -> Result<Evaluated> {
    match backend {
        Backend::Mc { replicas, seed } => {
            let (_, probes) = mc_profile(law, start, &[u], &[], replicas, seed);
            Ok(probes[0])
        }
        Backend::Uniformization { trunc_radius, tol } => {
            UniformizedWalk::new(law, start, u, trunc_radius, tol)?.occupancy(u)
        }
    }
}

/// `int_0^tau P(D^0_u = 0) du` — the flat-start window variance at unit
/// noise scale.
pub fn window_variance(law: &DWalkLaw, tau: f64, backend: Backend) -> Result<Evaluated> {
    let origin = vec![0; law.d];
    match backend {
        Backend::Mc { replicas, seed } => {
            let (ints, _) = mc_profile(law, &origin, &[], &[(0.0, tau)], replicas, seed);
            Ok(ints[0])
        }
        Backend::Uniformization { trunc_radius, tol } => {
            UniformizedWalk::new(law, &origin, tau, trunc_radius, tol)?.integral(tau)
        }
    }
}

/// `2 int_0^tau (P(D^0_u = 0) - P(D^i_u = 0)) du` — the variance of the
/// height difference between sites `0` and `i` at unit noise scale.
pub fn difference_variance(
    law: &DWalkLaw,
    i: &[i32],
    tau: f64,
    backend: Backend,
) -> Result<Evaluated> {
    let origin = vec![0; law.d];
    match backend {
        Backend::Mc { replicas, seed } => {
            let (a, _) = mc_profile(law, &origin, &[], &[(0.0, tau)], replicas, seed);
            let (b, _) = mc_profile(law, i, &[], &[(0.0, tau)], replicas, seed ^ 0x5851_f42d);
            Ok(Evaluated {
                value: 2.0 * (a[0].value - b[0].value),
                radius: 2.0 * a[0].radius.hypot(b[0].radius),
            })
        }
        Backend::Uniformization { trunc_radius, tol } => {
            let a = UniformizedWalk::new(law, &origin, tau, trunc_radius, tol)?.integral(tau)?;
            let b = UniformizedWalk::new(law, i, tau, trunc_radius, tol)?.integral(tau)?;
            Ok(Evaluated {
                value: 2.0 * (a.value - b.value),
                radius: 2.0 * (a.radius + b.radius),
            })
        }
    }
}

/// `int_s^{sMax} P(D^0_u = 0) du` — the squared L2 distance between the
/// window-`s` and window-`sMax` flat-start heights (unit noise scale).
pub fn residual_tail(
    law: &DWalkLaw,
    s: f64,
    s_max: f64,
    backend: Backend,
) -> Result<Evaluated> {
    if !(0.0 < s && s < s_max) {
        return Err(Error::SchemaError(format!(
            "need 0 < s < sMax, got s={s}, sMax={s_max}"
        )));
    }
    let origin = vec![0; law.d];
    match backend {
        Backend::Mc { replicas, seed } => {
            let (ints, _) = mc_profile(law, &origin, &[], &[(s, s_max)], replicas, seed);
            Ok(ints[0])
        }
        Backend::Uniformization { trunc_radius, tol } => {
            let w = UniformizedWalk::new(law, &origin, s_max, trunc_radius, tol)?;
            let a = w.integral(s_max)?;
            let b = w.integral(s)?;
            Ok(Evaluated {
                value: a.value - b.value,
                radius: a.radius + b.radius,
            })
        }
    }
}

/// Adaptive Simpson quadrature, kept as an independent cross-check of the
/// exact accumulator inside uniformization.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, rel_tol * whole.abs().max(1e-12), 40)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Kernel, Noise};
    use approx::assert_abs_diff_eq;

    fn nn(d: usize) -> DWalkLaw {
        DWalkLaw::new(&Kernel::nearest_neighbor(d)).unwrap()
    }

    #[test]
    fn jump_table_matches_hand_convolution_1d() {
        let law = nn(1);
        let off = d_jump_distribution(&law, &[3]);
        assert_eq!(off.len(), 2);
        assert_abs_diff_eq!(off[&vec![-1]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(off[&vec![1]], 1.0, epsilon = 1e-15);
        let at0 = d_jump_distribution(&law, &[0]);
        assert_abs_diff_eq!(at0[&vec![-2]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(at0[&vec![0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(at0[&vec![2]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(law.origin_exit_rate(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(law.off_rate(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn totally_asymmetric_walk_sticks_at_origin() {
        let k = Kernel::new(1, [(vec![1], 1.0)], Noise::Gaussian, 1.0).unwrap();
        let law = DWalkLaw::new(&k).unwrap();
        let at0 = d_jump_distribution(&law, &[0]);
        assert_eq!(at0.len(), 1);
        assert_abs_diff_eq!(at0[&vec![0]], 1.0, epsilon = 1e-15);
        assert_eq!(law.origin_exit_rate(), 0.0);
        let occ = occupancy_probability(
            &law,
            &[0],
            3.0,
            Backend::Uniformization {
                trunc_radius: Some(10),
                tol: 1e-6,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(occ.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn occupancy_at_time_zero() {
        let law = nn(1);
        let b = Backend::Uniformization {
            trunc_radius: Some(5),
            tol: 1e-8,
        };
        assert_abs_diff_eq!(
            occupancy_probability(&law, &[0], 0.0, b).unwrap().value,
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            occupancy_probability(&law, &[2], 0.0, b).unwrap().value,
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn small_time_expansion_at_origin() {
        // exit rate from 0 is 1/2, so P(D_u = 0) = 1 - u/2 + O(u^2)
        let law = nn(1);
        let u = 0.01;
        let occ = occupancy_probability(
            &law,
            &[0],
            u,
            Backend::Uniformization {
                trunc_radius: Some(20),
                tol: 1e-10,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(occ.value, 1.0 - u / 2.0, epsilon = 1e-4);
    }

    #[test]
    fn backends_agree_on_a_grid() {
        let law = nn(1);
        let uni = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-8,
        };
        for &u in &[0.5, 2.0, 5.0] {
            let exact = occupancy_probability(&law, &[0], u, uni).unwrap();
            let mc = occupancy_probability(
                &law,
                &[0],
                u,
                Backend::Mc {
                    replicas: 20_000,
                    seed: 7,
                },
            )
            .unwrap();
            let gap = (exact.value - mc.value).abs();
            assert!(
                gap < 3.0 * mc.radius.max(1e-4),
                "u={u}: exact {} vs mc {} +- {}",
                exact.value,
                mc.value,
                mc.radius
            );
        }
    }

    #[test]
    fn window_variance_bounds_and_growth() {
        let law = nn(3);
        let b = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-6,
        };
        let mut prev = 0.0;
        for &tau in &[0.5, 2.0, 8.0] {
            let v = window_variance(&law, tau, b).unwrap().value;
            assert!(v <= tau + 1e-12);
            assert!(v > prev);
            prev = v;
        }
        // integrand starts at 1
        let small = window_variance(&law, 0.01, b).unwrap().value;
        assert_abs_diff_eq!(small / 0.01, 1.0, epsilon = 0.02);
    }

    #[test]
    fn difference_variance_zero_at_origin_and_monotone() {
        let law = nn(1);
        let b = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-6,
        };
        assert_abs_diff_eq!(
            difference_variance(&law, &[0], 5.0, b).unwrap().value,
            0.0,
            epsilon = 1e-10
        );
        let mut prev = -1.0;
        for &tau in &[1.0, 4.0, 16.0] {
            let v = difference_variance(&law, &[1], tau, b).unwrap().value;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn symmetry_and_domination() {
        let law = nn(1);
        let b = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-8,
        };
        for &u in &[1.0, 3.0] {
            let p0 = occupancy_probability(&law, &[0], u, b).unwrap().value;
            for i in [1, 2, 3] {
                let pi = occupancy_probability(&law, &[i], u, b).unwrap().value;
                let pm = occupancy_probability(&law, &[-i], u, b).unwrap().value;
                assert_abs_diff_eq!(pi, pm, epsilon = 1e-9);
                assert!(p0 >= pi);
            }
        }
    }

    #[test]
    fn residual_tail_additivity() {
        let law = nn(2);
        let b = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-6,
        };
        let t1 = residual_tail(&law, 2.0, 10.0, b).unwrap().value;
        let w10 = window_variance(&law, 10.0, b).unwrap().value;
        let w2 = window_variance(&law, 2.0, b).unwrap().value;
        assert_abs_diff_eq!(t1, w10 - w2, epsilon = 1e-8);
    }

    #[test]
    fn truncation_too_small_is_reported() {
        let law = nn(1);
        let err = occupancy_probability(
            &law,
            &[0],
            50.0,
            Backend::Uniformization {
                trunc_radius: Some(3),
                tol: 1e-6,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TruncationTooSmall { .. }));
    }

    #[test]
    fn simpson_agrees_with_exact_accumulator() {
        let law = nn(1);
        let walk = UniformizedWalk::new(&law, &[0], 6.0, None, 1e-8).unwrap();
        let exact = walk.integral(6.0).unwrap().value;
        let quad = adaptive_simpson(&|u| walk.occupancy(u).unwrap().value, 0.0, 6.0, 1e-6);
        assert_abs_diff_eq!(exact, quad, epsilon = 1e-4);
    }

    #[test]
    fn mc_interval_estimate_matches_exact_tail() {
        let law = nn(1);
        let uni = Backend::Uniformization {
            trunc_radius: None,
            tol: 1e-6,
        };
        let exact = residual_tail(&law, 1.0, 8.0, uni).unwrap();
        let mc = residual_tail(
            &law,
            1.0,
            8.0,
            Backend::Mc {
                replicas: 20_000,
                seed: 2,
            },
        )
        .unwrap();
        assert!(
            (exact.value - mc.value).abs() < 3.0 * mc.radius,
            "exact {} vs mc {} +- {}",
            exact.value,
            mc.value,
            mc.radius
        );
    }
}
