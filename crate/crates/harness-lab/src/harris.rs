//! Event-driven engine.
//!
//! Each carrier site carries an independent rate-1 Poisson clock. At each ring
//! the height is replaced by the kernel-weighted average of its neighbours
//! plus `sigma` times a centred unit-variance noise mark; the jump mark picks
//! one neighbour with the kernel law and drives the tagged-observer variant.
//! Streams are generated per site from a counter-based seed, so the event set
//! is independent of iteration order and reusable across coupled runs.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Grid, HeightField, Noise, Target};
use crate::rng;

/// One clock ring at a site: its time, noise mark, and jump mark (an index
/// into the site's resolved jump law).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub eps: f64,
    pub jump: usize,
}

/// All events of all carrier sites on a time window `[0, window]`, plus the
/// time-ordered merged schedule.
#[derive(Debug, Clone)]
pub struct EventStream {
    pub window: f64,
    pub seed: u64,
    /// Events of site `i`, in increasing time.
    pub per_site: Vec<Vec<Event>>,
    /// `(site, epoch)` pairs sorted by event time; `epoch` indexes into
    /// `per_site[site]`.
    pub merged: Vec<(usize, u32)>,
}

fn draw_noise(noise: Noise, rng: &mut impl Rng) -> f64 {
    match noise {
        Noise::Gaussian => StandardNormal.sample(rng),
        // uniform on [-sqrt(3), sqrt(3)] has unit variance
        Noise::Uniform => rng.random_range(-1.0_f64..1.0) * 3.0_f64.sqrt(),
        Noise::Rademacher => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

fn draw_jump(law: &[(Target, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &(_, p)) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    law.len().saturating_sub(1)
}

/// Generate the marked event streams of every carrier site on `[0, window]`.
///
/// Ties in the merged schedule are broken by resampling the later event's
/// time; exact collisions have probability zero but are handled anyway so the
/// update order is always well defined.
pub fn generate_events(grid: &Grid, window: f64, seed: u64) -> Result<EventStream> {
    if !(window > 0.0) {
        return Err(Error::SchemaError(format!(
            "window must be positive, got {window}"
        )));
    }
    let poisson = Poisson::new(window).expect("positive window");
    let noise = grid.noise();
    let mut per_site: Vec<Vec<Event>> = Vec::with_capacity(grid.len());
    let mut total = 0usize;
    for (i, site) in grid.sites().iter().enumerate() {
        let mut r = rng::site_rng(seed, site);
        let n = poisson.sample(&mut r) as usize;
        let law = grid.jump_law(i);
        let mut events: Vec<Event> = (0..n)
            .map(|_| Event {
                time: r.random_range(0.0..window),
                eps: 0.0,
                jump: 0,
            })
            .collect();
        events.sort_unstable_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
        for ev in events.iter_mut() {
            ev.eps = draw_noise(noise, &mut r);
            ev.jump = draw_jump(law, &mut r);
        }
        total += n;
        per_site.push(events);
    }
    // Merge all events by time. Times are positive, so their IEEE bit
    // patterns sort numerically; packing (time bits, site, epoch) into one
    // u128 keeps the sort comparator branch-free and the records compact.
    debug_assert!(grid.len() < u32::MAX as usize);
    let pack = |per_site: &[Vec<Event>], keys: &mut Vec<u128>| {
        keys.clear();
        for (i, evs) in per_site.iter().enumerate() {
            for (k, ev) in evs.iter().enumerate() {
                let bits = ev.time.to_bits() as u128;
                keys.push((bits << 64) | ((i as u128) << 32) | k as u128);
            }
        }
        keys.sort_unstable();
    };
    let mut keys: Vec<u128> = Vec::with_capacity(total);
    pack(&per_site, &mut keys);
    // resolve exact time collisions by nudging via fresh draws
    let mut tie_rng = rng::stream_rng(seed, 0x7469_6573);
    let mut k = 1;
    while k < keys.len() {
        if keys[k - 1] >> 64 == keys[k] >> 64 {
            let i1 = ((keys[k] >> 32) & 0xffff_ffff) as usize;
            let e1 = (keys[k] & 0xffff_ffff) as usize;
            let fresh = tie_rng.random_range(0.0..window);
            per_site[i1][e1].time = fresh;
            // per-site order may have changed; restore it
            for evs in per_site.iter_mut() {
                if !evs.windows(2).all(|w| w[0].time <= w[1].time) {
                    evs.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
                }
            }
            pack(&per_site, &mut keys);
            k = 1;
        } else {
            k += 1;
        }
    }
    let merged: Vec<(usize, u32)> = keys
        .iter()
        .map(|&x| ((x >> 32) as u32 as usize, x as u32))
        .collect();
    Ok(EventStream {
        window,
        seed,
        per_site,
        merged,
    })
}

/// Engine update rule variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Average plus `sigma * eps`.
    Standard,
    /// Deterministic averaging only (`sigma` suppressed); used for harmonic
    /// fixed-point checks.
    NoNoise,
}

/// Result of a run: final field plus optional snapshots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Field at the end of the window.
    pub last: HeightField,
    /// Requested snapshot times with the fields at those times.
    pub snapshots: Vec<(f64, HeightField)>,
    /// Number of events applied.
    pub updates: usize,
}

/// Apply the events of `stream` on `[0, window]` to `initial`, recording the
/// field at each requested snapshot time.
///
/// Pinned sites never update. Snapshot times must be sorted.
pub fn evolve(
    grid: &Grid,
    stream: &EventStream,
    initial: &HeightField,
    variant: Variant,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    if initial.len() != grid.len() {
        return Err(Error::InitialMismatch {
            got: initial.len(),
            want: grid.len(),
        });
    }
    let sigma = grid.sigma();
    let mut field = initial.clone();
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    let mut next_snap = 0;
    let mut updates = 0;
    for &(i, e) in &stream.merged {
        let ev = stream.per_site[i][e as usize];
        while next_snap < snapshot_times.len() && snapshot_times[next_snap] < ev.time {
            snapshots.push((snapshot_times[next_snap], field.clone()));
            next_snap += 1;
        }
        if grid.is_pinned(i) {
            continue;
        }
        let avg = grid.p_average(&field, i);
        field.values[i] = match variant {
            Variant::Standard => avg + sigma * ev.eps,
            Variant::NoNoise => avg,
        };
        updates += 1;
    }
    while next_snap < snapshot_times.len() {
        snapshots.push((snapshot_times[next_snap], field.clone()));
        next_snap += 1;
    }
    Ok(Trajectory {
        last: field,
        snapshots,
        updates,
    })
}

/// Evolve the process as seen from the tagged observer at `origin`: at each
/// origin event the whole field is recentred by subtracting the observer's
/// new height, and the frame jumps with the origin's jump mark.
///
/// The same event stream drives [`evolve`] and this variant, so the identity
/// `seen(i) = eta(i + X) - eta(X)` holds pathwise with `X` the observer
/// location. If `origin` is pinned it never rings and the run degenerates to
/// plain relative heights.
pub fn evolve_seen_from_origin(
    grid: &Grid,
    stream: &EventStream,
    initial: &HeightField,
    origin: &[i32],
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    let origin_idx = grid
        .site_index(origin)
        .ok_or(Error::OriginOutsideCarrier)?;
    if initial.len() != grid.len() {
        return Err(Error::InitialMismatch {
            got: initial.len(),
            want: grid.len(),
        });
    }
    let sigma = grid.sigma();
    let mut field = initial.clone();
    // recentre at the start so the observer sits at height 0
    let base = field.values[origin_idx];
    for v in field.values.iter_mut() {
        *v -= base;
    }
    let mut observer = origin_idx;
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    let mut next_snap = 0;
    let mut updates = 0;
    for &(i, e) in &stream.merged {
        let ev = stream.per_site[i][e as usize];
        while next_snap < snapshot_times.len() && snapshot_times[next_snap] < ev.time {
            snapshots.push((snapshot_times[next_snap], field.clone()));
            next_snap += 1;
        }
        if grid.is_pinned(i) {
            continue;
        }
        let avg = grid.p_average(&field, i);
        field.values[i] = avg + sigma * ev.eps;
        updates += 1;
        if i == observer {
            // observer rides the jump mark and the frame recentres
            if let (Target::Interior(j), _) = grid.jump_law(i)[ev.jump] {
                observer = j;
            }
            let base = field.values[observer];
            for v in field.values.iter_mut() {
                *v -= base;
            }
        }
    }
    while next_snap < snapshot_times.len() {
        snapshots.push((snapshot_times[next_snap], field.clone()));
        next_snap += 1;
    }
    Ok(Trajectory {
        last: field,
        snapshots,
        updates,
    })
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    site: Vec<i32>,
    time: f64,
    eps: f64,
    jump: usize,
}

/// Write a stream as JSON lines, one event per line, in merged time order.
pub fn write_events_jsonl(grid: &Grid, stream: &EventStream, mut w: impl Write) -> Result<()> {
    for &(i, e) in &stream.merged {
        let ev = stream.per_site[i][e as usize];
        let line = EventLine {
            site: grid.sites()[i].clone(),
            time: ev.time,
            eps: ev.eps,
            jump: ev.jump,
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| Error::SchemaError(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

/// Read a JSONL event stream back for a given grid.
pub fn read_events_jsonl(grid: &Grid, r: impl BufRead, window: f64) -> Result<EventStream> {
    let mut per_site: Vec<Vec<Event>> = vec![Vec::new(); grid.len()];
    let mut merged: Vec<(usize, u32)> = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: EventLine =
            serde_json::from_str(&line).map_err(|e| Error::SchemaError(e.to_string()))?;
        let i = grid
            .site_index(&ev.site)
            .ok_or_else(|| Error::AnchorOutsideCarrier(ev.site.clone()))?;
        per_site[i].push(Event {
            time: ev.time,
            eps: ev.eps,
            jump: ev.jump,
        });
    }
    for (i, evs) in per_site.iter_mut().enumerate() {
        evs.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
        for k in 0..evs.len() {
            merged.push((i, k as u32));
        }
    }
    merged.sort_by(|a, b| {
        let ta = per_site[a.0][a.1 as usize].time;
        let tb = per_site[b.0][b.1 as usize].time;
        ta.partial_cmp(&tb).expect("finite times").then(a.cmp(b))
    });
    Ok(EventStream {
        window,
        seed: 0,
        per_site,
        merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, Kernel, Region};
    use approx::assert_abs_diff_eq;

    fn setup(radius: i32) -> (Kernel, Region, Grid) {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, radius);
        let grid = Grid::new(&k, &region).unwrap();
        (k, region, grid)
    }

    #[test]
    fn stream_is_deterministic_in_seed() {
        let (_, _, grid) = setup(5);
        let a = generate_events(&grid, 7.0, 99).unwrap();
        let b = generate_events(&grid, 7.0, 99).unwrap();
        assert_eq!(a.merged, b.merged);
        for (x, y) in a.per_site.iter().zip(&b.per_site) {
            assert_eq!(x, y);
        }
        let c = generate_events(&grid, 7.0, 100).unwrap();
        assert_ne!(
            a.per_site.iter().map(Vec::len).sum::<usize>(),
            0,
            "expected events on a window of length 7 over 11 sites"
        );
        assert!(a.merged != c.merged || a.per_site != c.per_site);
    }

    #[test]
    fn per_site_streams_ignore_other_sites() {
        // the stream of a site depends only on (seed, coords), not the box
        let k = Kernel::nearest_neighbor(1);
        let small = Grid::new(&k, &Region::centered_box(1, 2)).unwrap();
        let large = Grid::new(&k, &Region::centered_box(1, 6)).unwrap();
        let a = generate_events(&small, 3.0, 5).unwrap();
        let b = generate_events(&large, 3.0, 5).unwrap();
        let ia = small.site_index(&[1]).unwrap();
        let ib = large.site_index(&[1]).unwrap();
        let times_a: Vec<f64> = a.per_site[ia].iter().map(|e| e.time).collect();
        let times_b: Vec<f64> = b.per_site[ib].iter().map(|e| e.time).collect();
        assert_eq!(times_a, times_b);
    }

    #[test]
    fn merged_schedule_is_strictly_increasing() {
        let (_, _, grid) = setup(8);
        let s = generate_events(&grid, 20.0, 3).unwrap();
        let times: Vec<f64> = s
            .merged
            .iter()
            .map(|&(i, e)| s.per_site[i][e as usize].time)
            .collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn event_counts_match_poisson_law() {
        // chi-square goodness of fit on the per-window event count
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (_, _, grid) = setup(0);
        let window = 4.0;
        let n = 4000;
        let mut counts = vec![0usize; 12];
        for seed in 0..n {
            let s = generate_events(&grid, window, seed).unwrap();
            let c = s.per_site[0].len().min(counts.len() - 1);
            counts[c] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0;
        let mut pmf = 1.0_f64 * (-window).exp();
        let mut tail = 1.0;
        for (k, &obs) in counts.iter().enumerate() {
            let p = if k + 1 == counts.len() {
                tail
            } else {
                let p = pmf;
                tail -= pmf;
                pmf *= window / (k as f64 + 1.0);
                p
            };
            let exp = p * n as f64;
            if exp >= 5.0 {
                chi2 += (obs as f64 - exp).powi(2) / exp;
                dof += 1;
            }
        }
        let crit = ChiSquared::new((dof - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit} with dof {dof}");
    }

    #[test]
    fn noise_marks_are_centred_unit_variance() {
        let k = Kernel::nearest_neighbor(1).with_noise(Noise::Uniform);
        let grid = Grid::new(&k, &Region::centered_box(1, 0)).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0.0;
        for seed in 0..500 {
            let s = generate_events(&grid, 50.0, seed).unwrap();
            for e in &s.per_site[0] {
                sum += e.eps;
                sum2 += e.eps * e.eps;
                n += 1.0;
            }
        }
        assert!(n > 10_000.0);
        assert_abs_diff_eq!(sum / n, 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(sum2 / n, 1.0, epsilon = 0.05);
    }

    #[test]
    fn harmonic_field_is_fixed_point_without_noise() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::new(vec![-4], vec![4], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-5], -5.0), (vec![5], 5.0)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::from_fn(&grid, |s| s[0] as f64);
        let stream = generate_events(&grid, 30.0, 11).unwrap();
        let out = evolve(&grid, &stream, &field, Variant::NoNoise, &[]).unwrap();
        for (a, b) in out.last.values.iter().zip(&field.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_noise_contracts_to_harmonic_profile() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::new(vec![-4], vec![4], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-5], -5.0), (vec![5], 5.0)])
            .unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let start = HeightField::from_fn(&grid, |s| (s[0] * s[0]) as f64);
        let stream = generate_events(&grid, 400.0, 11).unwrap();
        let out = evolve(&grid, &stream, &start, Variant::NoNoise, &[]).unwrap();
        for (v, s) in out.last.values.iter().zip(grid.sites()) {
            assert_abs_diff_eq!(v, &(s[0] as f64), epsilon = 1e-6);
        }
    }

    #[test]
    fn pinned_sites_never_move() {
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 5).pin(vec![0]).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::flat(grid.len(), 0.0);
        let stream = generate_events(&grid, 25.0, 2).unwrap();
        let out = evolve(&grid, &stream, &field, Variant::Standard, &[]).unwrap();
        assert_eq!(out.last.values[grid.site_index(&[0]).unwrap()], 0.0);
    }

    #[test]
    fn linearity_splits_boundary_and_noise_parts() {
        // eta = (no-noise from initial+gamma) + (noisy from zero with zero gamma)
        let k = Kernel::nearest_neighbor(1);
        let gamma_region = Region::new(vec![-3], vec![3], Boundary::Fixed)
            .unwrap()
            .with_gamma([(vec![-4], 2.0), (vec![4], -1.0)])
            .unwrap();
        let zero_region = Region::new(vec![-3], vec![3], Boundary::Fixed).unwrap();
        let g_gamma = Grid::new(&k, &gamma_region).unwrap();
        let g_zero = Grid::new(&k, &zero_region).unwrap();
        let stream = generate_events(&g_gamma, 12.0, 77).unwrap();
        let initial = HeightField::from_fn(&g_gamma, |s| 0.3 * s[0] as f64);
        let full = evolve(&g_gamma, &stream, &initial, Variant::Standard, &[]).unwrap();
        let det = evolve(&g_gamma, &stream, &initial, Variant::NoNoise, &[]).unwrap();
        let zero_init = HeightField::flat(g_zero.len(), 0.0);
        let noise = evolve(&g_zero, &stream, &zero_init, Variant::Standard, &[]).unwrap();
        for i in 0..g_gamma.len() {
            assert_abs_diff_eq!(
                full.last.values[i],
                det.last.values[i] + noise.last.values[i],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn seen_from_origin_matches_recentred_field() {
        // with a pinned origin the observer never moves, so the tagged view is
        // exactly the field minus its value at the origin
        let k = Kernel::nearest_neighbor(1);
        let region = Region::centered_box(1, 4).pin(vec![0]).unwrap();
        let grid = Grid::new(&k, &region).unwrap();
        let field = HeightField::from_fn(&grid, |s| 0.1 * (s[0] as f64).powi(2));
        let stream = generate_events(&grid, 15.0, 8).unwrap();
        let plain = evolve(&grid, &stream, &field, Variant::Standard, &[]).unwrap();
        let seen = evolve_seen_from_origin(&grid, &stream, &field, &[0], &[]).unwrap();
        let o = grid.site_index(&[0]).unwrap();
        for i in 0..grid.len() {
            assert_abs_diff_eq!(
                seen.last.values[i],
                plain.last.values[i] - plain.last.values[o],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn jsonl_round_trip_reproduces_trajectory() {
        let (_, _, grid) = setup(3);
        let stream = generate_events(&grid, 9.0, 4).unwrap();
        let mut buf = Vec::new();
        write_events_jsonl(&grid, &stream, &mut buf).unwrap();
        let back = read_events_jsonl(&grid, &buf[..], 9.0).unwrap();
        let field = HeightField::flat(grid.len(), 0.0);
        let a = evolve(&grid, &stream, &field, Variant::Standard, &[]).unwrap();
        let b = evolve(&grid, &back, &field, Variant::Standard, &[]).unwrap();
        assert_eq!(a.last.values, b.last.values);
    }

    #[test]
    fn snapshots_bracket_the_run() {
        let (_, _, grid) = setup(3);
        let stream = generate_events(&grid, 10.0, 4).unwrap();
        let field = HeightField::flat(grid.len(), 0.0);
        let out = evolve(&grid, &stream, &field, Variant::Standard, &[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(out.snapshots.len(), 3);
        assert_eq!(out.snapshots[0].1.values, vec![0.0; grid.len()]);
        assert_eq!(out.snapshots[2].1.values, out.last.values);
    }
}
