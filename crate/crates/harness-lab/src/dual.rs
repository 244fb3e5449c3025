//! Backward absorbed-walk representation.
//!
//! Conditionally on the event times, the height at an anchor site after a
//! window of evolution from a flat-zero start is a linear functional of the
//! noise marks: a backward walk starts at the anchor at the end of the
//! window, and at each event of its current site (scanning time downwards)
//! it redistributes its mass by the jump kernel. The exact conditional
//! weights are computed by a dense dynamic program over all sites, so no
//! extra randomness enters. Mass reaching a pinned site freezes; in fixed
//! mode mass leaving the carrier freezes on the exterior shell.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harris::EventStream;
use crate::lattice::{Grid, HeightField, Site, Target};

/// Exact conditional occupation weights of the backward walk started at an
/// anchor, for a window `(start, end]` of an event stream.
#[derive(Debug, Clone)]
pub struct DualWeights {
    pub anchor: Site,
    pub start: f64,
    pub end: f64,
    pub seed: u64,
    /// `((site, epoch), weight)` for every event of the window at a
    /// non-pinned carrier site, in decreasing time order. The weight is the
    /// probability that the backward walk sits at the event's site just
    /// before (in backward time) the event fires; zero-weight events are
    /// kept so coupled comparisons can line up streams.
    pub epoch_weights: Vec<((usize, u32), f64)>,
    /// Mass still diffusing at the start of the window, per carrier site.
    pub terminal_interior: Vec<f64>,
    /// Mass frozen at pinned sites or on the exterior shell, by site.
    pub terminal_absorbed: BTreeMap<Site, f64>,
}

impl DualWeights {
    /// Total frozen plus diffusing mass; always 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.terminal_interior.iter().sum::<f64>()
            + self.terminal_absorbed.values().sum::<f64>()
    }

    /// Mass frozen at pinned or exterior sites.
    pub fn absorbed_mass(&self) -> f64 {
        self.terminal_absorbed.values().sum()
    }

    /// Conditional variance of the noise part given the event times:
    /// `sigma^2` times the sum of squared epoch weights.
    pub fn conditional_noise_variance(&self, sigma: f64) -> f64 {
        sigma * sigma
            * self
                .epoch_weights
                .iter()
                .map(|&(_, w)| w * w)
                .sum::<f64>()
    }
}

/// Run the backward dynamic program for `anchor` over the window
/// `(start, end]` of `stream`.
pub fn backward_weights(
    grid: &Grid,
    stream: &EventStream,
    anchor: &[i32],
    start: f64,
    end: f64,
) -> Result<DualWeights> {
    if !(0.0 <= start && start <= end && end <= stream.window) {
        return Err(Error::WindowMismatch { s: start, t: end });
    }
    let a = grid
        .site_index(anchor)
        .ok_or_else(|| Error::AnchorOutsideCarrier(anchor.to_vec()))?;
    let mut mass = vec![0.0_f64; grid.len()];
    let mut absorbed: BTreeMap<Site, f64> = BTreeMap::new();
    if grid.is_pinned(a) {
        absorbed.insert(anchor.to_vec(), 1.0);
        return Ok(DualWeights {
            anchor: anchor.to_vec(),
            start,
            end,
            seed: stream.seed,
            epoch_weights: Vec::new(),
            terminal_interior: mass,
            terminal_absorbed: absorbed,
        });
    }
    mass[a] = 1.0;
    let mut epoch_weights = Vec::new();
    for &(i, e) in stream.merged.iter().rev() {
        let t = stream.per_site[i][e as usize].time;
        if t > end {
            continue;
        }
        if t <= start {
            break;
        }
        if grid.is_pinned(i) {
            continue;
        }
        let w = mass[i];
        epoch_weights.push(((i, e), w));
        if w != 0.0 {
            mass[i] = 0.0;
            for &(target, p) in grid.jump_law(i) {
                match target {
                    Target::Interior(j) => {
                        if grid.is_pinned(j) {
                            *absorbed.entry(grid.sites()[j].clone()).or_insert(0.0) += w * p;
                        } else {
                            mass[j] += w * p;
                        }
                    }
                    Target::Exterior(j) => {
                        *absorbed.entry(grid.shell()[j].0.clone()).or_insert(0.0) += w * p;
                    }
                }
            }
        }
    }
    Ok(DualWeights {
        anchor: anchor.to_vec(),
        start,
        end,
        seed: stream.seed,
        epoch_weights,
        terminal_interior: mass,
        terminal_absorbed: absorbed,
    })
}

/// Reassemble the height from the weights: noise marks enter with their epoch
/// weights scaled by `sigma`, diffusing mass picks up the initial field, and
/// frozen mass picks up the pinned/exterior heights.
pub fn dual_height(
    grid: &Grid,
    stream: &EventStream,
    weights: &DualWeights,
    initial: &HeightField,
) -> Result<f64> {
    if weights.seed != stream.seed {
        return Err(Error::StreamMismatch);
    }
    if initial.len() != grid.len() {
        return Err(Error::InitialMismatch {
            got: initial.len(),
            want: grid.len(),
        });
    }
    let sigma = grid.sigma();
    let mut h = 0.0;
    for &((i, e), w) in &weights.epoch_weights {
        h += w * sigma * stream.per_site[i][e as usize].eps;
    }
    for (i, &w) in weights.terminal_interior.iter().enumerate() {
        h += w * initial.values[i];
    }
    for (site, &w) in &weights.terminal_absorbed {
        let v = if let Some(i) = grid.site_index(site) {
            debug_assert!(grid.is_pinned(i));
            initial.values[i]
        } else {
            grid.shell()
                .iter()
                .find(|(s, _)| s == site)
                .map(|&(_, v)| v)
                .unwrap_or(0.0)
        };
        h += w * v;
    }
    Ok(h)
}

/// Absolute gap between the engine height and its dual reconstruction at
/// `anchor`, over the full stream window. Both readings use the same events,
/// so the gap is rounding only.
pub fn representation_residual(
    grid: &Grid,
    stream: &EventStream,
    initial: &HeightField,
    anchor: &[i32],
) -> Result<f64> {
    let forward = crate::harris::evolve(
        grid,
        stream,
        initial,
        crate::harris::Variant::Standard,
        &[],
    )?;
    let a = grid
        .site_index(anchor)
        .ok_or_else(|| Error::AnchorOutsideCarrier(anchor.to_vec()))?;
    let w = backward_weights(grid, stream, anchor, 0.0, stream.window)?;
    let dual = dual_height(grid, stream, &w, initial)?;
    Ok((forward.last.values[a] - dual).abs())
}

/// Flat-start heights of `anchor` over the nested windows `(end - s, end]`
/// for each `s` in `spans`, all read from one backward scan of one stream.
///
/// Viewed as a function of the span, the height is a martingale in the
/// backward filtration; successive differences are the increments returned by
/// the second vector.
pub fn martingale_increments(
    grid: &Grid,
    stream: &EventStream,
    anchor: &[i32],
    spans: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let end = stream.window;
    let a = grid
        .site_index(anchor)
        .ok_or_else(|| Error::AnchorOutsideCarrier(anchor.to_vec()))?;
    for w in spans.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::SchemaError("spans must be strictly increasing".into()));
        }
    }
    if let Some(&last) = spans.last() {
        if last > end {
            return Err(Error::WindowMismatch {
                s: end - last,
                t: end,
            });
        }
    }
    let sigma = grid.sigma();
    let mut mass = vec![0.0_f64; grid.len()];
    if grid.is_pinned(a) {
        return Ok((vec![0.0; spans.len()], vec![0.0; spans.len()]));
    }
    mass[a] = 1.0;
    let mut acc = 0.0;
    let mut heights = vec![0.0; spans.len()];
    let mut next = 0;
    for &(i, e) in stream.merged.iter().rev() {
        let ev = stream.per_site[i][e as usize];
        // record every span boundary we cross while scanning down
        while next < spans.len() && ev.time <= end - spans[next] {
            heights[next] = acc;
            next += 1;
        }
        if next >= spans.len() {
            break;
        }
        if grid.is_pinned(i) {
            continue;
        }
        let w = mass[i];
        if w != 0.0 {
            acc += w * sigma * ev.eps;
            mass[i] = 0.0;
            for &(target, p) in grid.jump_law(i) {
                if let Target::Interior(j) = target {
                    if !grid.is_pinned(j) {
                        mass[j] += w * p;
                    }
                }
            }
        }
    }
    while next < spans.len() {
        heights[next] = acc;
        next += 1;
    }
    let mut increments = Vec::with_capacity(spans.len());
    let mut prev = 0.0;
    for &h in &heights {
        increments.push(h - prev);
        prev = h;
    }
    Ok((heights, increments))
}

#[derive(Serialize)]
struct WeightLine<'a> {
    site: &'a [i32],
    time: f64,
    weight: f64,
}

/// Write the epoch weights as JSON lines in decreasing time order.
pub fn write_weights_json(
    grid: &Grid,
    stream: &EventStream,
    weights: &DualWeights,
    mut w: impl Write,
) -> Result<()> {
    for &((i, e), wt) in &weights.epoch_weights {
        let line = WeightLine {
            site: &grid.sites()[i],
            time: stream.per_site[i][e as usize].time,
            weight: wt,
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| Error::SchemaError(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harris::{evolve, generate_events, Variant};
    use crate::lattice::{Boundary, HeightField, Kernel, Region};
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_one() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 4).pin(vec![0]).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 18.0, 13).unwrap();
        for anchor in [[1], [3], [-4]] {
            let w = backward_weights(&grid, &stream, &anchor, 0.0, 18.0).unwrap();
            assert_abs_diff_eq!(w.total_mass(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dual_matches_forward_fixed_boundary() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::new(vec![-5], vec![5], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-6], 1.0), (vec![6], -2.0)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 25.0, 21).unwrap();
        let initial = HeightField::from_fn(&grid, |s| 0.2 * s[0] as f64);
        for anchor in [[0], [3], [-5]] {
            let r = representation_residual(&grid, &stream, &initial, &anchor).unwrap();
            assert!(r < 1e-9, "residual {r} at {anchor:?}");
        }
    }

    #[test]
    fn dual_matches_forward_free_boundary() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::new(vec![0], vec![6], Boundary::Free)
            .unwrap()
            .pin(vec![0])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 20.0, 5).unwrap();
        let initial = HeightField::from_fn(&grid, |s| (s[0] as f64).sin());
        for anchor in [[1], [4], [6]] {
            let r = representation_residual(&grid, &stream, &initial, &anchor).unwrap();
            assert!(r < 1e-9, "residual {r} at {anchor:?}");
        }
    }

    #[test]
    fn dual_matches_forward_2d() {
        let k = Kernel::nearest_neighbor(2);
        let region = Region::centered_box(2, 3);
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 10.0, 30).unwrap();
        let initial = HeightField::from_fn(&grid, |s| (s[0] + 2 * s[1]) as f64 * 0.1);
        let r = representation_residual(&grid, &stream, &initial, &[1, -2]).unwrap();
        assert!(r < 1e-9, "residual {r}");
    }

    #[test]
    fn partial_window_matches_snapshot() {
        // a window (0, t0] with t0 inside the stream reproduces the field at t0
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 4);
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 12.0, 9).unwrap();
        let initial = HeightField::flat(grid.len(), 0.0);
        let t0 = 5.0;
        let traj = evolve(&grid, &stream, &initial, Variant::Standard, &[t0]).unwrap();
        let w = backward_weights(&grid, &stream, &[2], 0.0, t0).unwrap();
        let h = dual_height(&grid, &stream, &w, &initial).unwrap();
        let idx = grid.site_index(&[2]).unwrap();
        assert_abs_diff_eq!(h, traj.snapshots[0].1.values[idx], epsilon = 1e-10);
    }

    #[test]
    fn pinned_anchor_has_trivial_weights() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 3).pin(vec![0]).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 5.0, 1).unwrap();
        let w = backward_weights(&grid, &stream, &[0], 0.0, 5.0).unwrap();
        assert!(w.epoch_weights.is_empty());
        assert_abs_diff_eq!(w.terminal_absorbed[&vec![0]], 1.0, epsilon = 0.0);
    }

    #[test]
    fn nested_windows_have_monotone_noise_variance() {
        // the conditional variance sum of squared weights grows with the span
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 6);
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 40.0, 17).unwrap();
        let mut prev = -1.0;
        for span in [5.0, 10.0, 20.0, 40.0] {
            let w = backward_weights(&grid, &stream, &[0], 40.0 - span, 40.0).unwrap();
            let v = w.conditional_noise_variance(1.0);
            assert!(v >= prev, "variance dropped: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn martingale_scan_matches_windowed_weights() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 5);
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 30.0, 23).unwrap();
        let initial = HeightField::flat(grid.len(), 0.0);
        let spans = [4.0, 9.0, 17.0, 30.0];
        let (heights, increments) =
            martingale_increments(&grid, &stream, &[1], &spans).unwrap();
        for (m, &span) in spans.iter().enumerate() {
            let w = backward_weights(&grid, &stream, &[1], 30.0 - span, 30.0).unwrap();
            let h = dual_height(&grid, &stream, &w, &initial).unwrap();
            assert_abs_diff_eq!(heights[m], h, epsilon = 1e-10);
        }
        let total: f64 = increments.iter().sum();
        assert_abs_diff_eq!(total, heights[3], epsilon = 1e-12);
    }

    #[test]
    fn deep_pinning_absorbs_almost_everything() {
        // with a pinned origin and a long window, interior mass dies out
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 2).pin(vec![0]).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let stream = generate_events(&grid, 60.0, 3).unwrap();
        let w = backward_weights(&grid, &stream, &[1], 0.0, 60.0).unwrap();
        let interior: f64 = w.terminal_interior.iter().sum();
        assert!(interior < 1e-8, "interior mass {interior}");
    }
}
