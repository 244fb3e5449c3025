//! Lattice geometry: translation-invariant jump kernels, finite regions with
//! fixed or free boundaries, height configurations, and harmonicity checks.
//!
//! Kernels are stored as offset laws only; translation invariance is
//! structural. The finite range is measured in the max norm.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site, one coordinate per dimension.
pub type Site = Vec<i32>;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Noise law of the kernel; all three are centred with unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    Uniform,
    Rademacher,
}

/// Translation-invariant finite-range stochastic jump law `p(0, .)` together
/// with its noise specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    d: usize,
    /// Offsets with positive weight, sorted lexicographically.
    weights: Vec<(Site, f64)>,
    range: i32,
    noise: Noise,
    sigma: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct KernelRepr {
    d: usize,
    weights: Vec<WeightRepr>,
    noise: Noise,
    sigma: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct WeightRepr {
    offset: Site,
    p: f64,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        Kernel::new(
            r.d,
            r.weights.into_iter().map(|w| (w.offset, w.p)),
            r.noise,
            r.sigma,
        )
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            d: k.d,
            weights: k
                .weights
                .into_iter()
                .map(|(offset, p)| WeightRepr { offset, p })
                .collect(),
            noise: k.noise,
            sigma: k.sigma,
        }
    }
}

impl Kernel {
    pub fn new(
        d: usize,
        weights: impl IntoIterator<Item = (Site, f64)>,
        noise: Noise,
        sigma: f64,
    ) -> Result<Self> {
        let mut map: BTreeMap<Site, f64> = BTreeMap::new();
        for (offset, p) in weights {
            if offset.len() != d {
                return Err(Error::NonStochastic(format!(
                    "offset {offset:?} has wrong dimension (expected {d})"
                )));
            }
            *map.entry(offset).or_insert(0.0) += p;
        }
        let weights: Vec<(Site, f64)> = map.into_iter().filter(|&(_, p)| p != 0.0).collect();
        let range = weights
            .iter()
            .map(|(o, _)| o.iter().map(|c| c.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0);
        if sigma < 0.0 {
            return Err(Error::NonStochastic(format!("sigma {sigma} is negative")));
        }
        let k = Kernel {
            d,
            weights,
            range,
            noise,
            sigma,
        };
        k.validate()?;
        Ok(k)
    }

    /// Checks the stochasticity invariants: nonnegative weights summing to 1,
    /// every offset within the declared range, nonempty support.
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut sum = 0.0;
        for (offset, p) in &self.weights {
            if *p < 0.0 {
                return Err(Error::NonStochastic(format!(
                    "weight {p} at offset {offset:?} is negative"
                )));
            }
            if offset.iter().map(|c| c.abs()).max().unwrap_or(0) > self.range {
                return Err(Error::RangeViolation(offset.clone(), self.range));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::NonStochastic(format!("weights sum to {sum}")));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn range(&self) -> i32 {
        self.range
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    /// Offsets with positive weight, sorted.
    pub fn offsets(&self) -> &[(Site, f64)] {
        &self.weights
    }

    pub fn weight(&self, offset: &[i32]) -> f64 {
        self.weights
            .iter()
            .find(|(o, _)| o.as_slice() == offset)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// True iff `p(0,o) = p(0,-o)` for every offset.
    pub fn is_symmetric(&self) -> bool {
        self.asymmetric_offset().is_none()
    }

    pub(crate) fn asymmetric_offset(&self) -> Option<Site> {
        for (o, p) in &self.weights {
            let neg: Site = o.iter().map(|c| -c).collect();
            if (self.weight(&neg) - p).abs() > WEIGHT_SUM_TOL {
                return Some(o.clone());
            }
        }
        None
    }

    /// Symmetric nearest-neighbour kernel in dimension `d` with unit-variance
    /// Gaussian noise and `sigma = 1`.
    pub fn nearest_neighbor(d: usize) -> Self {
        let p = 1.0 / (2 * d) as f64;
        let mut weights = Vec::new();
        for axis in 0..d {
            for sign in [-1, 1] {
                let mut o = vec![0; d];
                o[axis] = sign;
                weights.push((o, p));
            }
        }
        Kernel::new(d, weights, Noise::Gaussian, 1.0).expect("nearest-neighbor kernel is valid")
    }
}

/// Free function mirror of [`Kernel::validate`].
pub fn validate_kernel(k: &Kernel) -> Result<()> {
    k.validate()
}

/// Boundary handling outside the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Heights outside the carrier are frozen at a boundary field `gamma`
    /// (flat zero when no values are given).
    Fixed,
    /// Jumps are renormalized to stay inside the carrier.
    Free,
}

/// A finite simulation domain: a box of sites, a pinned subset held at 0, and
/// the boundary mode with its exterior field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr", into = "RegionRepr")]
pub struct Region {
    lo: Site,
    hi: Site,
    pinned: BTreeSet<Site>,
    boundary: Boundary,
    /// Exterior heights on the one-jump shell; empty means flat zero.
    gamma: BTreeMap<Site, f64>,
}

#[derive(Serialize, Deserialize, Clone)]
struct RegionRepr {
    #[serde(rename = "box")]
    box_: BoxRepr,
    #[serde(default)]
    pinned: Vec<Site>,
    boundary: Boundary,
    #[serde(default)]
    gamma: Vec<GammaRepr>,
}

#[derive(Serialize, Deserialize, Clone)]
struct BoxRepr {
    lo: Site,
    hi: Site,
}

#[derive(Serialize, Deserialize, Clone)]
struct GammaRepr {
    site: Site,
    value: f64,
}

impl TryFrom<RegionRepr> for Region {
    type Error = Error;
    fn try_from(r: RegionRepr) -> Result<Self> {
        let mut region = Region::new(r.box_.lo, r.box_.hi, r.boundary)?;
        for site in r.pinned {
            region = region.pin(site)?;
        }
        if !r.gamma.is_empty() {
            region = region.with_gamma(r.gamma.into_iter().map(|g| (g.site, g.value)))?;
        }
        Ok(region)
    }
}

impl From<Region> for RegionRepr {
    fn from(r: Region) -> Self {
        RegionRepr {
            box_: BoxRepr {
                lo: r.lo,
                hi: r.hi,
            },
            pinned: r.pinned.into_iter().collect(),
            boundary: r.boundary,
            gamma: r
                .gamma
                .into_iter()
                .map(|(site, value)| GammaRepr { site, value })
                .collect(),
        }
    }
}

impl Region {
    pub fn new(lo: Site, hi: Site, boundary: Boundary) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::SchemaError(
                "box lo/hi must be nonempty and of equal dimension".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::SchemaError("box lo exceeds hi".into()));
        }
        Ok(Region {
            lo,
            hi,
            pinned: BTreeSet::new(),
            boundary,
            gamma: BTreeMap::new(),
        })
    }

    /// Centered box `{-radius..radius}^d` with a fixed flat boundary.
    pub fn centered_box(d: usize, radius: i32) -> Self {
        Region::new(vec![-radius; d], vec![radius; d], Boundary::Fixed).expect("valid box")
    }

    /// Pin a carrier site at height zero.
    pub fn pin(mut self, site: Site) -> Result<Self> {
        if !self.contains(&site) {
            return Err(Error::SchemaError(format!(
                "pinned site {site:?} lies outside the carrier"
            )));
        }
        self.pinned.insert(site);
        Ok(self)
    }

    /// Attach an exterior boundary field. Rejected in free mode.
    pub fn with_gamma(mut self, gamma: impl IntoIterator<Item = (Site, f64)>) -> Result<Self> {
        if self.boundary == Boundary::Free {
            return Err(Error::SchemaError(
                "free-boundary regions carry no gamma field".into(),
            ));
        }
        for (site, value) in gamma {
            if self.contains(&site) {
                return Err(Error::SchemaError(format!(
                    "gamma site {site:?} lies inside the carrier"
                )));
            }
            self.gamma.insert(site, value);
        }
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn contains(&self, site: &[i32]) -> bool {
        site.len() == self.lo.len()
            && site
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(c, (l, h))| l <= c && c <= h)
    }

    pub fn is_pinned(&self, site: &[i32]) -> bool {
        self.pinned.contains(site)
    }

    pub fn pinned_sites(&self) -> impl Iterator<Item = &Site> {
        self.pinned.iter()
    }

    /// Exterior height at `site`: the stored gamma value, or flat zero when no
    /// gamma was given. `None` when a partial gamma misses the site.
    pub fn exterior_value(&self, site: &[i32]) -> Option<f64> {
        if self.gamma.is_empty() {
            Some(0.0)
        } else {
            self.gamma.get(site).copied()
        }
    }

    /// All carrier sites in lexicographic order.
    pub fn carrier(&self) -> Vec<Site> {
        let d = self.dimension();
        let mut sites = Vec::new();
        let mut cur = self.lo.clone();
        loop {
            sites.push(cur.clone());
            let mut axis = d;
            loop {
                if axis == 0 {
                    return sites;
                }
                axis -= 1;
                if cur[axis] < self.hi[axis] {
                    cur[axis] += 1;
                    for (i, c) in cur.iter_mut().enumerate().skip(axis + 1) {
                        *c = self.lo[i];
                    }
                    break;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True iff `inner`'s box is contained in this box.
    pub fn contains_region(&self, inner: &Region) -> bool {
        inner.lo.iter().zip(&self.lo).all(|(i, o)| i >= o)
            && inner.hi.iter().zip(&self.hi).all(|(i, o)| i <= o)
    }
}

/// Height configuration on a region's carrier, stored in the carrier's
/// lexicographic site order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub values: Vec<f64>,
}

impl HeightField {
    pub fn flat(n: usize, c: f64) -> Self {
        HeightField {
            values: vec![c; n],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[i32]) -> f64) -> Self {
        HeightField {
            values: grid.sites().iter().map(|s| f(s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Where one unit of jump mass from a carrier site lands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Another carrier site, by index (possibly pinned).
    Interior(usize),
    /// An exterior shell site, by index into [`Grid::shell`].
    Exterior(usize),
}

/// Indexed view of a (kernel, region) pair: site numbering plus the resolved
/// jump law of every carrier site. This is the shared fast path of the
/// engine, the dual walk and the Gibbs builder.
#[derive(Debug, Clone)]
pub struct Grid {
    region: Region,
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    pinned: Vec<bool>,
    /// Per carrier site: jump targets with weights. Free mode stores the
    /// renormalized law; pinned sites keep their unrenormalized raw law (it is
    /// never used to update them).
    plan: Vec<Vec<(Target, f64)>>,
    /// Exterior shell sites with their boundary heights (fixed mode only).
    shell: Vec<(Site, f64)>,
    noise: Noise,
    sigma: f64,
}

impl Grid {
    pub fn new(kernel: &Kernel, region: &Region) -> Result<Self> {
        if kernel.dimension() != region.dimension() {
            return Err(Error::SchemaError(format!(
                "kernel dimension {} != region dimension {}",
                kernel.dimension(),
                region.dimension()
            )));
        }
        let sites = region.carrier();
        let index: HashMap<Site, usize> = sites
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let pinned: Vec<bool> = sites.iter().map(|s| region.is_pinned(s)).collect();
        let mut shell: Vec<(Site, f64)> = Vec::new();
        let mut shell_index: HashMap<Site, usize> = HashMap::new();
        let mut plan = Vec::with_capacity(sites.len());
        for (i, site) in sites.iter().enumerate() {
            let mut row: Vec<(Target, f64)> = Vec::with_capacity(kernel.offsets().len());
            match region.boundary() {
                Boundary::Fixed => {
                    for (offset, p) in kernel.offsets() {
                        let target: Site =
                            site.iter().zip(offset).map(|(a, b)| a + b).collect();
                        if let Some(&j) = index.get(&target) {
                            row.push((Target::Interior(j), *p));
                        } else {
                            let value = region
                                .exterior_value(&target)
                                .ok_or_else(|| Error::MissingBoundary(target.clone()))?;
                            let j = *shell_index.entry(target.clone()).or_insert_with(|| {
                                shell.push((target.clone(), value));
                                shell.len() - 1
                            });
                            row.push((Target::Exterior(j), *p));
                        }
                    }
                }
                Boundary::Free => {
                    let mut inside_mass = 0.0;
                    for (offset, p) in kernel.offsets() {
                        let target: Site =
                            site.iter().zip(offset).map(|(a, b)| a + b).collect();
                        if let Some(&j) = index.get(&target) {
                            row.push((Target::Interior(j), *p));
                            inside_mass += p;
                        }
                    }
                    if inside_mass <= 0.0 {
                        if !pinned[i] {
                            return Err(Error::ZeroInteriorMass(site.clone()));
                        }
                    } else {
                        for (_, p) in row.iter_mut() {
                            *p /= inside_mass;
                        }
                    }
                }
            }
            plan.push(row);
        }
        Ok(Grid {
            region: region.clone(),
            sites,
            index,
            pinned,
            plan,
            shell,
            noise: kernel.noise(),
            sigma: kernel.sigma(),
        })
    }

    /// Noise law inherited from the kernel.
    pub fn noise(&self) -> Noise {
        self.noise
    }

    /// Noise scale inherited from the kernel.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_index(&self, site: &[i32]) -> Option<usize> {
        self.index.get(site).copied()
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned[i]
    }

    pub fn shell(&self) -> &[(Site, f64)] {
        &self.shell
    }

    /// Resolved jump law of carrier site `i`.
    pub fn jump_law(&self, i: usize) -> &[(Target, f64)] {
        &self.plan[i]
    }

    /// Kernel-weighted average of the neighbours of site `i`, reading the
    /// field inside the carrier and the boundary values outside.
    pub fn p_average(&self, field: &HeightField, i: usize) -> f64 {
        let mut sum = 0.0;
        for &(target, p) in &self.plan[i] {
            let h = match target {
                Target::Interior(j) => field.values[j],
                Target::Exterior(j) => self.shell[j].1,
            };
            sum += p * h;
        }
        sum
    }
}

/// Kernel-weighted neighbour average at `site`.
///
/// In fixed mode the field is juxtaposed with gamma outside the carrier; in
/// free mode the renormalized in-carrier law is used.
pub fn p_average(
    kernel: &Kernel,
    field: &HeightField,
    region: &Region,
    site: &[i32],
) -> Result<f64> {
    let grid = Grid::new(kernel, region)?;
    let i = grid
        .site_index(site)
        .ok_or_else(|| Error::AnchorOutsideCarrier(site.to_vec()))?;
    if field.len() != grid.len() {
        return Err(Error::InitialMismatch {
            got: field.len(),
            want: grid.len(),
        });
    }
    Ok(grid.p_average(field, i))
}

/// True iff the field is p-harmonic at every non-pinned carrier site, to
/// absolute tolerance `tol`.
pub fn is_harmonic(kernel: &Kernel, field: &HeightField, region: &Region, tol: f64) -> Result<bool> {
    let grid = Grid::new(kernel, region)?;
    if field.len() != grid.len() {
        return Err(Error::InitialMismatch {
            got: field.len(),
            want: grid.len(),
        });
    }
    for i in 0..grid.len() {
        if grid.is_pinned(i) {
            continue;
        }
        if (grid.p_average(field, i) - field.values[i]).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Conditional jump law at `site` restricted to the carrier and renormalized
/// to sum to 1 (free-boundary kernel).
pub fn free_site_kernel(kernel: &Kernel, region: &Region, site: &[i32]) -> Result<BTreeMap<Site, f64>> {
    if !region.contains(site) {
        return Err(Error::AnchorOutsideCarrier(site.to_vec()));
    }
    let mut law = BTreeMap::new();
    let mut mass = 0.0;
    for (offset, p) in kernel.offsets() {
        let target: Site = site.iter().zip(offset).map(|(a, b)| a + b).collect();
        if region.contains(&target) {
            mass += p;
            *law.entry(target).or_insert(0.0) += p;
        }
    }
    if mass <= 0.0 {
        return Err(Error::ZeroInteriorMass(site.to_vec()));
    }
    for v in law.values_mut() {
        *v /= mass;
    }
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn nn1() -> Kernel {
        Kernel::nearest_neighbor(1)
    }

    #[test]
    fn validate_accepts_symmetric_nearest_neighbor() {
        assert!(validate_kernel(&nn1()).is_ok());
        let k2 = Kernel::nearest_neighbor(2);
        assert!(validate_kernel(&k2).is_ok());
        assert_eq!(k2.range(), 1);
    }

    #[test]
    fn validate_rejects_non_stochastic() {
        let err = Kernel::new(
            1,
            [(vec![-1], 0.6), (vec![1], 0.6)],
            Noise::Gaussian,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonStochastic(_)));
    }

    #[test]
    fn validate_rejects_empty_support() {
        let err = Kernel::new(1, [], Noise::Gaussian, 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptySupport));
    }

    #[test]
    fn p_average_midpoint() {
        let k = nn1();
        let region = Region::new(vec![0], vec![2], Boundary::Fixed).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let mut field = HeightField::flat(grid.len(), 0.0);
        field.values[grid.site_index(&[2]).unwrap()] = 4.0;
        let v = p_average(&k, &field, &region, &[1]).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn p_average_flat_zero_is_zero() {
        let k = Kernel::nearest_neighbor(2);
        let region = Region::centered_box(2, 3);
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::flat(grid.len(), 0.0);
        for site in grid.sites() {
            assert_eq!(p_average(&k, &field, &region, site).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_fields_are_harmonic() {
        let k = nn1();
        let region = Region::new(vec![-3], vec![3], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-4], -4.0), (vec![4], 4.0)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::from_fn(&grid, |s| s[0] as f64);
        for site in grid.sites() {
            let v = p_average(&k, &field, &region, site).unwrap();
            assert_abs_diff_eq!(v, site[0] as f64, epsilon = 1e-12);
        }
        assert!(is_harmonic(&k, &field, &region, 1e-9).unwrap());
    }

    #[test]
    fn quadratic_field_is_not_harmonic() {
        let k = nn1();
        let region = Region::new(vec![-3], vec![3], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-4], 16.0), (vec![4], 16.0)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::from_fn(&grid, |s| (s[0] * s[0]) as f64);
        // the average exceeds the value by exactly 1
        let v = p_average(&k, &field, &region, &[0]).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        assert!(!is_harmonic(&k, &field, &region, 1e-9).unwrap());
    }

    #[test]
    fn constant_field_is_harmonic() {
        let k = nn1();
        let region = Region::new(vec![0], vec![4], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-1], 3.5), (vec![5], 3.5)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::flat(grid.len(), 3.5);
        assert!(is_harmonic(&k, &field, &region, 1e-12).unwrap());
    }

    #[test]
    fn free_site_kernel_interior_unchanged() {
        let k = nn1();
        let region = Region::new(vec![0], vec![5], Boundary::Free).unwrap();
        let law = free_site_kernel(&k, &region, &[2]).unwrap();
        assert_eq!(law.len(), 2);
        assert_abs_diff_eq!(law[&vec![1]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(law[&vec![3]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn free_site_kernel_edge_renormalizes() {
        let k = nn1();
        let region = Region::new(vec![0], vec![5], Boundary::Free).unwrap();
        let law = free_site_kernel(&k, &region, &[0]).unwrap();
        assert_eq!(law.len(), 1);
        assert_abs_diff_eq!(law[&vec![1]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn free_site_kernel_isolated_site_errors() {
        let k = nn1();
        let region = Region::new(vec![0], vec![0], Boundary::Free).unwrap();
        let err = free_site_kernel(&k, &region, &[0]).unwrap_err();
        assert!(matches!(err, Error::ZeroInteriorMass(_)));
    }

    #[test]
    fn missing_boundary_is_reported() {
        let k = nn1();
        // partial gamma: only one side of the shell covered
        let region = Region::new(vec![0], vec![2], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![3], 1.0)])
            .unwrap();
        let err = Grid::new(&k, &region).unwrap_err();
        assert!(matches!(err, Error::MissingBoundary(_)));
    }

    #[test]
    fn carrier_order_is_lexicographic() {
        let region = Region::new(vec![0, 0], vec![1, 1], Boundary::Fixed).unwrap();
        assert_eq!(
            region.carrier(),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert_eq!(region.len(), 4);
    }

    #[test]
    fn kernel_json_round_trip() {
        let k = Kernel::new(
            2,
            [
                (vec![1, 0], 0.25),
                (vec![-1, 0], 0.25),
                (vec![0, 1], 0.25),
                (vec![0, -1], 0.25),
            ],
            Noise::Uniform,
            0.5,
        )
        .unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"noise\":\"uniform\""));
        let back: Kernel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn region_json_matches_schema() {
        let json = r#"{"box":{"lo":[-2],"hi":[2]},"pinned":[[0]],"boundary":"fixed","gamma":[{"site":[3],"value":1.5},{"site":[-3],"value":0.0}]}"#;
        let region: Region = serde_json::from_str(json).unwrap();
        assert!(region.is_pinned(&[0]));
        assert_eq!(region.boundary(), Boundary::Fixed);
        assert_eq!(region.exterior_value(&[3]), Some(1.5));
        let back = serde_json::to_string(&region).unwrap();
        let again: Region = serde_json::from_str(&back).unwrap();
        assert_eq!(again, region);
    }
}
