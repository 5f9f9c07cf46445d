//! Realization likelihoods and the particle/realization mutual information.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::sim::ViewAction;
use crate::template::ObjectModel;

use super::particles::{bits_count, bits_get, Particle};
use super::render_cache::RenderCache;
use super::sampling::SceneRealization;

/// Particle likelihood `γ · exp(−Υ − μ²)`.
#[inline]
pub fn likelihood(upsilon: f64, mu: f64, gamma: f64) -> f64 {
    gamma * (-upsilon - mu * mu).exp()
}

#[inline]
pub fn log_likelihood(upsilon: f64, mu: f64, gamma: f64) -> f64 {
    gamma.ln() - upsilon - mu * mu
}

/// Mutual information between particles and realizations for one action,
/// from a row-major `n_part × n_comb` table of log-likelihoods.
///
/// Every row is normalized over realizations; the evidence of realization
/// `j` is `Σ_i w_i p(z_j | l_i)`.
pub fn mutual_information(log_lik: &[f64], n_comb: usize, weights: &[f64]) -> f64 {
    let n_part = weights.len();
    assert_eq!(log_lik.len(), n_part * n_comb);
    if n_part == 0 || n_comb == 0 {
        return 0.0;
    }
    let mut p = vec![0.0; log_lik.len()];
    for i in 0..n_part {
        let row = &log_lik[i * n_comb..(i + 1) * n_comb];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut p[i * n_comb..(i + 1) * n_comb];
        if m == f64::NEG_INFINITY {
            out.iter_mut().for_each(|v| *v = 1.0 / n_comb as f64);
            continue;
        }
        let mut s = 0.0;
        for (o, &l) in out.iter_mut().zip(row) {
            *o = (l - m).exp();
            s += *o;
        }
        out.iter_mut().for_each(|v| *v /= s);
    }
    let mut evidence = vec![0.0; n_comb];
    for i in 0..n_part {
        for j in 0..n_comb {
            evidence[j] += weights[i] * p[i * n_comb + j];
        }
    }
    debug_assert!((evidence.iter().sum::<f64>() - weights.iter().sum::<f64>()).abs() < 1e-9);
    let mut mi = 0.0;
    for i in 0..n_part {
        for j in 0..n_comb {
            let v = p[i * n_comb + j];
            if v > 0.0 {
                mi += v * (v / evidence[j]).ln();
            }
        }
    }
    (mi / n_part as f64).max(0.0)
}

/// A particle seen from an action: its self-visible raster points projected
/// into the image, with camera depths.
#[derive(Debug, Clone, Default)]
pub struct ParticleView {
    pub ids: Vec<u32>,
    pub pts: Vec<(f64, f64, f64)>,
    pub lo: (f64, f64),
    pub hi: (f64, f64),
}

impl ParticleView {
    pub fn new(model: &ObjectModel, object_to_world: &Pose, action: &ViewAction) -> Self {
        let pose = action.camera_pose.compose(object_to_world);
        let intr = &action.intrinsics;
        let ids = model.visible_ids(&pose, intr);
        let r = pose.rotation_matrix();
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let pts = ids
            .iter()
            .map(|&i| {
                let p = r * model.raster.points[i as usize] + pose.translation;
                let q = intr.project_unchecked(&p);
                lo = (lo.0.min(q.x), lo.1.min(q.y));
                hi = (hi.0.max(q.x), hi.1.max(q.y));
                (q.x, q.y, p.z)
            })
            .collect();
        Self { ids, pts, lo, hi }
    }
}

/// Average chamfer distance of a particle against a realization, and the
/// raster ids the synthetic observation would reveal.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationMatch {
    pub mu: f64,
    pub seen: Vec<u32>,
}

/// Per point, the minimum distance over the members' maps. Points hidden
/// behind a member's surface (by more than `occlusion_eps`) are skipped.
/// Without members or unoccluded points the result is the truncation
/// distance of the cache.
pub fn realization_avg_cd(members: &[usize], view: &ParticleView, action: usize, cache: &RenderCache, occlusion_eps: f64) -> Result<RealizationMatch> {
    if view.pts.is_empty() {
        return Err(Error::NoVisiblePoints);
    }
    let cap = cache.truncation;
    let maps: Vec<_> = members.iter().filter_map(|&c| cache.get(c, action)).filter(|m| m.overlaps(view.lo, view.hi)).collect();
    let mut sum = 0.0;
    let mut seen = Vec::new();
    for (&(x, y, z), &id) in view.pts.iter().zip(&view.ids) {
        if maps.iter().any(|m| m.occludes(x, y, z, occlusion_eps)) {
            continue;
        }
        seen.push(id);
        sum += maps.iter().map(|m| m.distance(x, y, cap)).fold(cap, f64::min);
    }
    let mu = if seen.is_empty() || members.is_empty() { cap } else { sum / seen.len() as f64 };
    Ok(RealizationMatch { mu, seen })
}

/// Log-likelihoods of every (particle, realization) pair for one action,
/// row-major. `views[i]` is particle `i` seen from the action; `total` is the
/// raster size of the searched model. Agrees with evaluating
/// [`realization_avg_cd`] pair by pair.
pub fn action_log_likelihoods(
    particles: &[Particle],
    views: &[ParticleView],
    realizations: &[SceneRealization],
    action: usize,
    cache: &RenderCache,
    total: usize,
    occlusion_eps: f64,
) -> Vec<f64> {
    let n_comb = realizations.len();
    let words = cache.n_candidates.div_ceil(64).max(1);
    let mut masks = vec![0u64; n_comb * words];
    for (r, m) in realizations.iter().zip(masks.chunks_mut(words)) {
        for &c in &r.members {
            m[c / 64] |= 1 << (c % 64);
        }
    }
    let cap = cache.truncation;
    let mut out = vec![0.0; particles.len() * n_comb];
    for (i, (p, v)) in particles.iter().zip(views).enumerate() {
        let row = &mut out[i * n_comb..(i + 1) * n_comb];
        let base = bits_count(&p.seen);
        if v.pts.is_empty() {
            let g = base.max(1) as f64 / total as f64;
            row.iter_mut().for_each(|l| *l = log_likelihood(p.upsilon, cap, g));
            continue;
        }
        // Only candidates that reach or hide some point of the particle
        // matter; realizations agreeing on those share a value.
        let near: Vec<usize> = (0..cache.n_candidates)
            .filter(|&c| {
                cache.get(c, action).is_some_and(|m| {
                    m.overlaps(v.lo, v.hi) && v.pts.iter().any(|&(x, y, z)| m.distance(x, y, cap) < cap || m.occludes(x, y, z, occlusion_eps))
                })
            })
            .collect();
        // Per point: the near candidates that may hide it, as a bitmask, and
        // those within the truncation distance, closest first.
        let nn = near.len();
        let nw = nn.div_ceil(64).max(1);
        let mut occl = vec![0u64; v.pts.len() * nw];
        let mut close: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v.pts.len()];
        for (k, &c) in near.iter().enumerate() {
            let m = cache.get(c, action).expect("near candidates have maps");
            for (j, &(x, y, z)) in v.pts.iter().enumerate() {
                if m.occludes(x, y, z, occlusion_eps) {
                    occl[j * nw + k / 64] |= 1 << (k % 64);
                }
                let d = m.distance(x, y, cap);
                if d < cap {
                    close[j].push((k, d));
                }
            }
        }
        close.iter_mut().for_each(|l| l.sort_by(|a, b| a.1.total_cmp(&b.1)));
        let fresh: Vec<bool> = v.ids.iter().map(|&id| !bits_get(&p.seen, id as usize)).collect();
        let mut memo: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut key = vec![0u64; nw];
        for (j, m) in masks.chunks(words).enumerate() {
            key.iter_mut().for_each(|w| *w = 0);
            for (k, &c) in near.iter().enumerate() {
                if m[c / 64] >> (c % 64) & 1 == 1 {
                    key[k / 64] |= 1 << (k % 64);
                }
            }
            if let Some(&l) = memo.get(key.as_slice()) {
                row[j] = l;
                continue;
            }
            let (mut sum, mut seen, mut new) = (0.0, 0usize, 0usize);
            for (pt, &f) in fresh.iter().enumerate() {
                if occl[pt * nw..(pt + 1) * nw].iter().zip(&key).any(|(o, k)| o & k != 0) {
                    continue;
                }
                sum += close[pt].iter().find(|(k, _)| key[k / 64] >> (k % 64) & 1 == 1).map_or(cap, |e| e.1);
                seen += 1;
                new += usize::from(f);
            }
            let mu = if seen == 0 { cap } else { sum / seen as f64 };
            let g = (base + new).max(1) as f64 / total as f64;
            let l = log_likelihood(p.upsilon, mu, g);
            memo.insert(key.clone(), l);
            row[j] = l;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct double sum over normalized rows.
    fn oracle(lik: &[Vec<f64>], w: &[f64]) -> f64 {
        let rows: Vec<Vec<f64>> = lik
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let nc = lik[0].len();
        let ev: Vec<f64> = (0..nc).map(|j| rows.iter().zip(w).map(|(r, wi)| r[j] * wi).sum()).collect();
        let mut s = 0.0;
        for r in &rows {
            for j in 0..nc {
                s += r[j] * (r[j] / ev[j]).ln();
            }
        }
        s / lik.len() as f64
    }

    #[test]
    fn likelihood_values() {
        assert_eq!(likelihood(0.0, 0.0, 1.0), 1.0);
        assert!((likelihood(0.0, 1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((likelihood(0.3, 0.7, 0.5) - 0.5 * likelihood(0.3, 0.7, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases_are_zero() {
        assert_eq!(mutual_information(&[0.1f64.ln(), 0.5f64.ln(), 0.4f64.ln()], 3, &[1.0]), 0.0);
        let row = [-1.0, -2.0, -0.5];
        let table: Vec<f64> = row.iter().chain(&row).chain(&row).copied().collect();
        assert!(mutual_information(&table, 3, &[0.2, 0.3, 0.5]).abs() < 1e-15);
    }

    #[test]
    fn extreme_log_values_are_stable() {
        let table = [-1e4, -1e4 - 1.0, -2e4, -2e4];
        let mi = mutual_information(&table, 2, &[0.5, 0.5]);
        let lik = vec![vec![1.0, (-1.0f64).exp()], vec![1.0, 1.0]];
        assert!((mi - oracle(&lik, &[0.5, 0.5])).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_double_sum(n_part in 1usize..=5, n_comb in 1usize..=4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let lik: Vec<Vec<f64>> = (0..n_part).map(|_| (0..n_comb).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
            let mut w: Vec<f64> = (0..n_part).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let flat: Vec<f64> = lik.iter().flatten().map(|v| v.ln()).collect();
            let mi = mutual_information(&flat, n_comb, &w);
            prop_assert!((mi - oracle(&lik, &w)).abs() < 1e-10);
            prop_assert!(mi >= 0.0);
        }
    }

    mod scene {
        use super::super::*;
        use crate::nbv::particles::{bits_set, seed_particles};
        use crate::nbv::render_cache::render_realization_maps;
        use crate::nbv::sampling::{sample_combinations, PlacedCandidate};
        use crate::sim;
        use nalgebra::Vector3;
        use rand::SeedableRng;

        struct Fixture {
            models: Vec<ObjectModel>,
            candidates: Vec<PlacedCandidate>,
            actions: Vec<ViewAction>,
            cache: RenderCache,
        }

        fn fixture() -> Fixture {
            let models = sim::standard_models();
            let ws = crate::geometry::Aabb {
                min: Vector3::new(-0.08, -0.08, 0.0),
                max: Vector3::new(0.08, 0.08, 0.1),
            };
            let scene = sim::generate_scene(&models, 5, &ws, 3).unwrap();
            let candidates: Vec<PlacedCandidate> = scene
                .placements
                .iter()
                .map(|p| {
                    let mi = models.iter().position(|m| m.id == p.object_id).unwrap();
                    PlacedCandidate::new(&models, mi, p.pose, 0.9)
                })
                .collect();
            let actions = sim::hemisphere_views(&Vector3::zeros(), 0.4, 2, 1, &sim::default_intrinsics());
            let cache = render_realization_maps(&candidates, &actions, &models, 40.0);
            Fixture {
                models,
                candidates,
                actions,
                cache,
            }
        }

        #[test]
        fn own_map_gives_small_distance_and_empty_gives_cap() {
            let f = fixture();
            for a in 0..f.actions.len() {
                let c = &f.candidates[0];
                let v = ParticleView::new(&f.models[c.model_index], &c.pose, &f.actions[a]);
                if v.pts.is_empty() {
                    continue;
                }
                let own = realization_avg_cd(&[0], &v, a, &f.cache, 0.005).unwrap();
                assert!(own.mu < 1.0, "self distance {}", own.mu);
                let none = realization_avg_cd(&[], &v, a, &f.cache, 0.005).unwrap();
                assert_eq!(none.mu, 40.0);
                assert_eq!(none.seen.len(), v.pts.len());
                // More members never increase the distance of a visible point.
                let all: Vec<usize> = (0..f.candidates.len()).collect();
                let more = realization_avg_cd(&all, &v, a, &f.cache, 0.005).unwrap();
                assert!(more.seen.len() <= own.seen.len());
            }
        }

        #[test]
        fn table_matches_pairwise_evaluation() {
            let f = fixture();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let realizations = sample_combinations(&f.candidates, 60, &mut rng);
            let target = f.candidates[0].model_index;
            let total = f.models[target].raster.len();
            let seeds: Vec<&PlacedCandidate> = f.candidates.iter().filter(|c| c.model_index == target).collect();
            let mut particles = seed_particles(&seeds, 12, total, 0.003, 0.03, &mut rng);
            for (i, p) in particles.iter_mut().enumerate() {
                p.upsilon = i as f64 * 0.5;
                for id in (0..total).step_by(3 + i) {
                    bits_set(&mut p.seen, id);
                }
            }
            for a in 0..f.actions.len() {
                let views: Vec<ParticleView> = particles.iter().map(|p| ParticleView::new(&f.models[target], &p.pose, &f.actions[a])).collect();
                let table = action_log_likelihoods(&particles, &views, &realizations, a, &f.cache, total, 0.005);
                for (i, (p, v)) in particles.iter().zip(&views).enumerate() {
                    for (j, r) in realizations.iter().enumerate() {
                        let base = bits_count(&p.seen);
                        let expected = match realization_avg_cd(&r.members, v, a, &f.cache, 0.005) {
                            Ok(m) => {
                                let new = m.seen.iter().filter(|&&id| !bits_get(&p.seen, id as usize)).count();
                                log_likelihood(p.upsilon, m.mu, (base + new).max(1) as f64 / total as f64)
                            }
                            Err(_) => log_likelihood(p.upsilon, 40.0, base.max(1) as f64 / total as f64),
                        };
                        let got = table[i * realizations.len() + j];
                        assert!((got - expected).abs() < 1e-9, "particle {i} realization {j}: {got} vs {expected}");
                    }
                }
            }
        }
    }
}
