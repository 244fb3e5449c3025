//! The Gaussian side: the harmonic-crystal field that is stationary and
//! reversible for the dynamics under Gaussian noise.
//!
//! With a fixed or pinned region the precision matrix is `Q = I - P` with `P`
//! the kernel restricted to the free sites, so the covariance is the
//! expected-visits Green function of the absorbed walk and each one-site
//! conditional law is exactly the engine's update law (the harness property).
//!
//! With a free boundary plus a pinned site the renormalized kernel is
//! asymmetric at the edges, so `I - P` cannot be symmetric; the precision is
//! instead the graph Laplacian of the symmetrized edge weights
//! `w(i,j) = (p~(i,j) + p~(j,i))/2`, with the weight towards the pin kept in
//! the diagonal. That form is shift-invariant in the height differences and
//! exchanges exactly with the noise under the whole-field shift update, which
//! is the reversibility this module tests in free mode.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harris::{evolve, generate_events, Variant};
use crate::lattice::{Boundary, Grid, HeightField, Kernel, Noise, Region, Site, Target};
use crate::rng;

/// Precision/covariance pair of the Gaussian field on the free sites of a
/// region, with a triangular factor for sampling.
#[derive(Debug, Clone)]
pub struct GibbsModel {
    grid: Grid,
    /// Grid indices of the free (non-pinned) sites, in carrier order.
    free: Vec<usize>,
    /// Inverse map: free index of each grid site.
    free_of: Vec<Option<usize>>,
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GibbsModel {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn free_sites(&self) -> Vec<Site> {
        self.free.iter().map(|&i| self.grid.sites()[i].clone()).collect()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Free-site index of a lattice site.
    pub fn free_index(&self, site: &[i32]) -> Option<usize> {
        self.grid.site_index(site).and_then(|i| self.free_of[i])
    }

    /// Embed a free-site vector into a full-carrier field (pinned sites 0).
    pub fn embed(&self, free_values: &[f64]) -> HeightField {
        let mut field = HeightField::flat(self.grid.len(), 0.0);
        for (a, &i) in self.free.iter().enumerate() {
            field.values[i] = free_values[a];
        }
        field
    }

    /// Restrict a full-carrier field to the free sites.
    pub fn restrict(&self, field: &HeightField) -> Vec<f64> {
        self.free.iter().map(|&i| field.values[i]).collect()
    }
}

/// Build the Gaussian model for a symmetric kernel with `p(0,0) = 0`.
pub fn build_model(kernel: &Kernel, region: &Region) -> Result<GibbsModel> {
    if let Some(o) = kernel.asymmetric_offset() {
        return Err(Error::AsymmetricKernel(o));
    }
    if kernel.weight(&vec![0; kernel.dimension()]) != 0.0 {
        return Err(Error::SelfLoopKernel);
    }
    let grid = Grid::new(kernel, region)?;
    if region.boundary() == Boundary::Free && region.pinned_sites().next().is_none() {
        return Err(Error::NoEscape);
    }
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !grid.is_pinned(i)).collect();
    let mut free_of = vec![None; grid.len()];
    for (a, &i) in free.iter().enumerate() {
        free_of[i] = Some(a);
    }
    let n = free.len();
    let mut q = DMatrix::<f64>::zeros(n, n);
    match region.boundary() {
        Boundary::Fixed => {
            // Q = I - P restricted to free sites; mass to pinned or exterior
            // sites is dropped, which is what makes Q invertible
            for (a, &i) in free.iter().enumerate() {
                q[(a, a)] = 1.0;
                for &(target, p) in grid.jump_law(i) {
                    if let Target::Interior(j) = target {
                        if let Some(b) = free_of[j] {
                            q[(a, b)] -= p;
                        }
                    }
                }
            }
        }
        Boundary::Free => {
            // symmetrized edge weights over the whole carrier, pin weight in
            // the diagonal
            let mut w = vec![BTreeMap::<usize, f64>::new(); grid.len()];
            for i in 0..grid.len() {
                for &(target, p) in grid.jump_law(i) {
                    if let Target::Interior(j) = target {
                        if j != i {
                            *w[i].entry(j).or_insert(0.0) += 0.5 * p;
                            *w[j].entry(i).or_insert(0.0) += 0.5 * p;
                        }
                    }
                }
            }
            for (a, &i) in free.iter().enumerate() {
                let mut diag = 0.0;
                for (&j, &wij) in &w[i] {
                    diag += wij;
                    if let Some(b) = free_of[j] {
                        q[(a, b)] -= wij;
                    }
                }
                q[(a, a)] = diag;
            }
        }
    }
    let chol = Cholesky::new(q.clone()).ok_or(Error::NoEscape)?;
    let covariance = chol.inverse();
    Ok(GibbsModel {
        grid,
        free,
        free_of,
        precision: q,
        covariance,
        chol,
    })
}

/// Unnormalized log density `-eta' Q eta / 2` of a free-site vector.
pub fn log_density(model: &GibbsModel, free_values: &[f64]) -> Result<f64> {
    if free_values.len() != model.n_free() {
        return Err(Error::DimensionMismatch {
            got: free_values.len(),
            want: model.n_free(),
        });
    }
    let v = DVector::from_column_slice(free_values);
    Ok(-0.5 * (v.transpose() * &model.precision * &v)[(0, 0)])
}

fn sample_one(model: &GibbsModel, rng: &mut impl Rng) -> Vec<f64> {
    let n = model.n_free();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    // Q = L L'; solving L' x = z gives Cov(x) = Q^{-1}
    let x = model
        .chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("factor is nonsingular");
    x.iter().copied().collect()
}

/// `n` i.i.d. centred Gaussian free-site vectors with covariance `Sigma`.
pub fn sample_field(model: &GibbsModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|r| {
            let mut rng = rng::stream_rng(seed, r as u64);
            sample_one(model, &mut rng)
        })
        .collect()
}

/// Conditional mean weights `-Q(site,j)/Q(site,site)` of the free neighbours
/// of `site` under the model.
pub fn conditional_mean_weights(model: &GibbsModel, site: &[i32]) -> Result<BTreeMap<Site, f64>> {
    let a = model
        .free_index(site)
        .ok_or_else(|| Error::AnchorOutsideCarrier(site.to_vec()))?;
    let qaa = model.precision[(a, a)];
    let mut out = BTreeMap::new();
    for (b, &i) in model.free.iter().enumerate() {
        if b != a && model.precision[(a, b)] != 0.0 {
            out.insert(
                model.grid.sites()[i].clone(),
                -model.precision[(a, b)] / qaa,
            );
        }
    }
    Ok(out)
}

/// Model export: free sites plus the covariance, row-major.
pub fn write_model_json(model: &GibbsModel, mut w: impl Write) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Repr {
        free_sites: Vec<Site>,
        covariance: Vec<f64>,
    }
    let repr = Repr {
        free_sites: model.free_sites(),
        covariance: model.covariance.iter().copied().collect(),
    };
    serde_json::to_writer_pretty(&mut w, &repr).map_err(|e| Error::SchemaError(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// detailed balance
// ---------------------------------------------------------------------------

/// Observable on the free coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// Height at the free site with this free index.
    Coord(usize),
    /// Product of the heights at two free indices.
    Pair(usize, usize),
}

impl Probe {
    fn eval(self, v: &[f64]) -> f64 {
        match self {
            Probe::Coord(i) => v[i],
            Probe::Pair(i, j) => v[i] * v[j],
        }
    }
}

/// Which dynamics carries the stationary-start replicas forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// The event-driven engine (one-site resampling updates).
    HeatBath,
    /// Whole-field shift updates at rate 1: the field drops by the pin row's
    /// weighted average plus noise. Probes must not depend on the pinned
    /// height, which stays 0 by construction.
    Shift,
}

/// Result of a detailed-balance run.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    /// `max |mean C(f,g)| / stderr` over all probe pairs.
    pub max_studentized: f64,
    /// `(probe index f, probe index g, studentized asymmetry)`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// False when the kernel's noise law is not Gaussian, in which case the
    /// statistic is computed but reversibility is not claimed.
    pub gaussian: bool,
}

/// Estimate `C(f,g) = E[f(eta_0) g(eta_u) - g(eta_0) f(eta_u)]` over a probe
/// battery, with `eta_0` drawn from the model scaled by `init_scale` and
/// evolved for time `u` by `dyn_kernel` on `region`.
///
/// `init_scale = 1` with the model's own kernel tests reversibility; other
/// scales or an asymmetric kernel are deliberate-violation controls.
#[allow(clippy::too_many_arguments)]
pub fn detailed_balance_statistic(
    model: &GibbsModel,
    dyn_kernel: &Kernel,
    region: &Region,
    u: f64,
    replicas: usize,
    seed: u64,
    probes: &[Probe],
    dynamics: Dynamics,
    init_scale: f64,
) -> Result<BalanceReport> {
    if !(u >= 0.0) {
        return Err(Error::SchemaError(format!("u must be >= 0, got {u}")));
    }
    let dyn_grid = Grid::new(dyn_kernel, region)?;
    if dyn_grid.len() != model.grid.len() {
        return Err(Error::DimensionMismatch {
            got: dyn_grid.len(),
            want: model.grid.len(),
        });
    }
    // origin row for the shift update: renormalized law of the first pinned
    // site
    let shift_row: Option<Vec<(usize, f64)>> = match dynamics {
        Dynamics::HeatBath => None,
        Dynamics::Shift => {
            let pin = region
                .pinned_sites()
                .next()
                .ok_or(Error::FreeWithoutPin)?
                .clone();
            let i = model.grid.site_index(&pin).expect("pin is a carrier site");
            Some(
                model
                    .grid
                    .jump_law(i)
                    .iter()
                    .filter_map(|&(t, p)| match t {
                        Target::Interior(j) => Some((j, p)),
                        Target::Exterior(_) => None,
                    })
                    .collect(),
            )
        }
    };
    let n_pairs = probes.len() * (probes.len() - 1) / 2;
    let sums = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut local_rng = rng::stream_rng(seed, r as u64);
            let mut x0 = sample_one(model, &mut local_rng);
            for v in x0.iter_mut() {
                *v *= init_scale;
            }
            let xu = if u == 0.0 {
                x0.clone()
            } else {
                match dynamics {
                    Dynamics::HeatBath => {
                        let field = model.embed(&x0);
                        let stream = generate_events(&dyn_grid, u, rng::mix(seed, r as u64))
                            .expect("positive window");
                        let out = evolve(&dyn_grid, &stream, &field, Variant::Standard, &[])
                            .expect("matching field");
                        model.restrict(&out.last)
                    }
                    Dynamics::Shift => {
                        let row = shift_row.as_ref().expect("shift row prepared");
                        let mut field = model.embed(&x0);
                        let sigma = model.grid.sigma();
                        let n_events =
                            Poisson::new(u).expect("positive window").sample(&mut local_rng)
                                as usize;
                        for _ in 0..n_events {
                            let mut avg = 0.0;
                            for &(j, p) in row {
                                avg += p * field.values[j];
                            }
                            let eps: f64 = StandardNormal.sample(&mut local_rng);
                            let shift = avg + sigma * eps;
                            for (i, v) in field.values.iter_mut().enumerate() {
                                if !model.grid.is_pinned(i) {
                                    *v -= shift;
                                }
                            }
                        }
                        model.restrict(&field)
                    }
                }
            };
            let f0: Vec<f64> = probes.iter().map(|p| p.eval(&x0)).collect();
            let fu: Vec<f64> = probes.iter().map(|p| p.eval(&xu)).collect();
            let mut c = Vec::with_capacity(n_pairs);
            for a in 0..probes.len() {
                for b in a + 1..probes.len() {
                    c.push(f0[a] * fu[b] - f0[b] * fu[a]);
                }
            }
            let c2: Vec<f64> = c.iter().map(|&x| x * x).collect();
            (c, c2)
        })
        .reduce(
            || (vec![0.0; n_pairs], vec![0.0; n_pairs]),
            |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(&b.0) {
                    *x += y;
                }
                for (x, y) in a.1.iter_mut().zip(&b.1) {
                    *x += y;
                }
                a
            },
        );
    let n = replicas as f64;
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut max_t = 0.0_f64;
    let mut k = 0;
    for a in 0..probes.len() {
        for b in a + 1..probes.len() {
            let mean = sums.0[k] / n;
            let var = ((sums.1[k] - sums.0[k] * sums.0[k] / n) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let t = if se == 0.0 { 0.0 } else { mean.abs() / se };
            pairs.push((a, b, t));
            max_t = max_t.max(t);
            k += 1;
        }
    }
    Ok(BalanceReport {
        max_studentized: max_t,
        pairs,
        gaussian: model.grid.noise() == Noise::Gaussian && dyn_grid.noise() == Noise::Gaussian,
    })
}

// ---------------------------------------------------------------------------
// nested coupled sampler
// ---------------------------------------------------------------------------

/// One coupled realization of the flat-start window heights across nested
/// boxes, driven by shared event times and shared level Gaussians.
#[derive(Debug, Clone)]
pub struct NestedFields {
    /// `values[m][a]`: height of anchor `a` in box `m`.
    pub values: Vec<Vec<f64>>,
    /// `cond_variance[m][a]`: exact conditional variance given the event
    /// times, `sigma^2` times the summed squared weights.
    pub cond_variance: Vec<Vec<f64>>,
    /// Largest violation of the telescoping identity
    /// `sum_l a_l^2 = (b_m)^2` over all events.
    pub max_telescope_gap: f64,
}

const RADICAND_TOL: f64 = -1e-12;

/// Couple the flat-start heights of nested boxes over one window of length
/// `span`, as a monotone sequence of refinements: each level adds an
/// independent Gaussian with the incremental weight
/// `a_m = ((b_m)^2 - (b_{m-1})^2)^{1/2}` per event.
pub fn coupled_nested_fields(
    kernel: &Kernel,
    regions: &[Region],
    span: f64,
    anchors: &[Site],
    seed: u64,
) -> Result<NestedFields> {
    for m in 1..regions.len() {
        if !regions[m].contains_region(&regions[m - 1]) {
            return Err(Error::NonNestedBoxes(m - 1, m));
        }
    }
    if kernel.noise() != Noise::Gaussian {
        return Err(Error::NonGaussianNoise);
    }
    let sigma = kernel.sigma();
    let mut values = vec![vec![0.0; anchors.len()]; regions.len()];
    let mut cond_variance = vec![vec![0.0; anchors.len()]; regions.len()];
    let mut max_gap = 0.0_f64;

    // per-site event streams depend only on (seed, coords), so generating per
    // box yields identical marks at shared sites: the times are shared by
    // construction
    let grids: Vec<Grid> = regions
        .iter()
        .map(|r| Grid::new(kernel, r))
        .collect::<Result<_>>()?;
    let streams: Vec<_> = grids
        .iter()
        .map(|g| generate_events(g, span, seed))
        .collect::<Result<Vec<_>>>()?;

    // level Gaussians Z^l, keyed by (level, site, epoch); drawn lazily per
    // (level, site) in epoch order
    let z_value = |level: usize, site: &[i32], epoch: u32| -> f64 {
        let mut r = rng::site_rng(rng::mix(seed ^ 0x5a5a_5a5a, level as u64), site);
        let mut z = 0.0;
        for _ in 0..=epoch {
            z = StandardNormal.sample(&mut r);
        }
        z
    };

    for (a_idx, anchor) in anchors.iter().enumerate() {
        // accumulated (b_{m-1})^2 and running sum of a_l Z_l per event key
        let mut prev_b2: BTreeMap<(Site, u32), f64> = BTreeMap::new();
        let mut w_sum: BTreeMap<(Site, u32), f64> = BTreeMap::new();
        for (m, grid) in grids.iter().enumerate() {
            let dual = crate::dual::backward_weights(grid, &streams[m], anchor, 0.0, span)?;
            let mut value = 0.0;
            let mut var = 0.0;
            let mut seen: BTreeMap<(Site, u32), f64> = BTreeMap::new();
            for &((i, e), b) in &dual.epoch_weights {
                let key = (grid.sites()[i].clone(), e);
                let b2 = b * b;
                let p = prev_b2.get(&key).copied().unwrap_or(0.0);
                let radicand = b2 - p;
                if radicand < RADICAND_TOL {
                    return Err(Error::NegativeRadicand {
                        site: key.0,
                        epoch: e,
                        radicand,
                    });
                }
                let a = radicand.max(0.0).sqrt();
                let w = w_sum.get(&key).copied().unwrap_or(0.0)
                    + a * z_value(m, &key.0, e);
                // telescoping check: accumulated squares reproduce b^2
                let acc = p + a * a;
                max_gap = max_gap.max((acc - b2).abs());
                value += sigma * w;
                var += sigma * sigma * b2;
                seen.insert(key.clone(), b2);
                w_sum.insert(key, w);
            }
            // events of earlier levels keep their weights in later boxes via
            // the dual weights themselves (zero-weight events are recorded
            // too), so prev_b2 is replaced wholesale
            for (key, b2) in seen {
                prev_b2.insert(key, b2);
            }
            values[m][a_idx] = value;
            cond_variance[m][a_idx] = var;
        }
    }
    Ok(NestedFields {
        values,
        cond_variance,
        max_telescope_gap: max_gap,
    })
}
