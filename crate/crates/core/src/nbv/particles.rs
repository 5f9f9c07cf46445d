//! Particle belief over the pose of the searched object.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_from_axis_angle, Pose};

use super::sampling::{candidate_probability, PlacedCandidate};

#[inline]
pub fn bits_new(n: usize) -> Vec<u64> {
    vec![0; n.div_ceil(64)]
}

#[inline]
pub fn bits_set(b: &mut [u64], i: usize) {
    b[i / 64] |= 1 << (i % 64);
}

#[inline]
pub fn bits_get(b: &[u64], i: usize) -> bool {
    b.get(i / 64).is_some_and(|w| w >> (i % 64) & 1 == 1)
}

#[inline]
pub fn bits_count(b: &[u64]) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Object-to-world pose.
    pub pose: Pose,
    pub weight: f64,
    /// Sum over real views of the squared average directional chamfer distance.
    pub upsilon: f64,
    /// Raster points seen in real views so far.
    pub seen: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub object_id: String,
    pub model_index: usize,
    pub particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }
}

/// Gaussian perturbation: translation noise per axis, and a rotation by a
/// Gaussian axis-angle vector applied on the left.
pub fn jitter_pose(pose: &Pose, sigma_t: f64, sigma_r: f64, rng: &mut impl Rng) -> Pose {
    let nt = Normal::new(0.0, sigma_t.max(0.0)).expect("finite sigma");
    let nr = Normal::new(0.0, sigma_r.max(0.0)).expect("finite sigma");
    let dt = nalgebra::Vector3::from_fn(|_, _| nt.sample(rng));
    let dw = nalgebra::Vector3::from_fn(|_, _| nr.sample(rng));
    Pose::from_rt(&(rotation_from_axis_angle(&dw) * pose.rotation_matrix()), pose.translation + dt)
}

/// `n` particles around the given candidates, choosing the candidate of each
/// particle by its inclusion probability. Weights start uniform.
pub fn seed_particles(candidates: &[&PlacedCandidate], n: usize, raster_len: usize, sigma_t: f64, sigma_r: f64, rng: &mut impl Rng) -> Vec<Particle> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let w: Vec<f64> = candidates.iter().map(|c| candidate_probability(c.score)).collect();
    let total: f64 = w.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < w.len() && u >= w[k] {
                u -= w[k];
                k += 1;
            }
            Particle {
                pose: jitter_pose(&candidates[k].pose, sigma_t, sigma_r, rng),
                weight: 1.0 / n as f64,
                upsilon: 0.0,
                seen: bits_new(raster_len),
            }
        })
        .collect()
}

/// Sets `w_i ∝ γ_i · exp(−Υ_i)` with `γ_i` the seen fraction of the raster,
/// normalized. When every weight vanishes the weights are reset to uniform
/// and `true` is returned.
pub fn update_weights(particles: &mut [Particle], raster_len: usize) -> bool {
    if particles.is_empty() {
        return false;
    }
    let logw: Vec<f64> = particles
        .iter()
        .map(|p| (bits_count(&p.seen) as f64 / raster_len as f64).ln() - p.upsilon)
        .collect();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        let u = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = u);
        return true;
    }
    let s: f64 = logw.iter().map(|l| (l - m).exp()).sum();
    for (p, l) in particles.iter_mut().zip(&logw) {
        p.weight = (l - m).exp() / s;
    }
    false
}

/// Low-variance (systematic) resampling; returns the chosen indices.
pub fn low_variance_resample(weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut u = rng.random_range(0.0..step);
    let mut c = weights[0];
    let mut i = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        while u > c && i + 1 < weights.len() {
            i += 1;
            c += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}

/// Resamples `n` particles and jitters the copies; weights become uniform.
pub fn resample(particles: &[Particle], n: usize, sigma_t: f64, sigma_r: f64, rng: &mut impl Rng) -> Vec<Particle> {
    let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    low_variance_resample(&w, n, rng)
        .into_iter()
        .map(|i| Particle {
            pose: jitter_pose(&particles[i].pose, sigma_t, sigma_r, rng),
            weight: 1.0 / n as f64,
            ..particles[i].clone()
        })
        .collect()
}

/// A mode of the particle distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Pose of the heaviest particle of the cluster.
    pub pose: Pose,
    pub weight: f64,
    pub size: usize,
}

/// Greedy clustering: the heaviest unassigned particle opens a cluster that
/// absorbs every unassigned particle within both radii. Clusters carrying less
/// than `min_fraction` of the total weight are dropped.
pub fn extract_modes(particles: &[Particle], trans_radius: f64, rot_radius: f64, min_fraction: f64) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..particles.len()).collect();
    order.sort_by(|&a, &b| particles[b].weight.total_cmp(&particles[a].weight).then(a.cmp(&b)));
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let mut taken = vec![false; particles.len()];
    let mut out = Vec::new();
    for &s in &order {
        if taken[s] {
            continue;
        }
        let seed = &particles[s].pose;
        let mut c = Cluster {
            pose: *seed,
            weight: 0.0,
            size: 0,
        };
        for &j in &order {
            if taken[j] {
                continue;
            }
            let (dt, dr) = particles[j].pose.distance(seed);
            if dt < trans_radius && dr < rot_radius {
                taken[j] = true;
                c.weight += particles[j].weight;
                c.size += 1;
            }
        }
        if c.weight >= min_fraction * total {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn particle(x: f64, upsilon: f64) -> Particle {
        let mut seen = bits_new(10);
        (0..10).for_each(|i| bits_set(&mut seen, i));
        Particle {
            pose: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
            weight: 0.0,
            upsilon,
            seen,
        }
    }

    #[test]
    fn bitsets() {
        let mut b = bits_new(130);
        assert_eq!(b.len(), 3);
        bits_set(&mut b, 0);
        bits_set(&mut b, 129);
        bits_set(&mut b, 129);
        assert!(bits_get(&b, 129) && !bits_get(&b, 128) && !bits_get(&b, 1000));
        assert_eq!(bits_count(&b), 2);
    }

    #[test]
    fn weight_formula() {
        let mut one = vec![particle(0.0, 123.0)];
        update_weights(&mut one, 10);
        assert_eq!(one[0].weight, 1.0);
        let mut two = vec![particle(0.0, 0.0), particle(1.0, 10.0)];
        update_weights(&mut two, 10);
        let e = (-10.0f64).exp();
        assert!((two[0].weight - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((two[1].weight - e / (1.0 + e)).abs() < 1e-12);
        assert!((two[1].weight - 4.5e-5).abs() < 1e-6);
        // Half the seen points halves the weight ratio.
        let mut half = vec![particle(0.0, 0.0), particle(1.0, 0.0)];
        half[1].seen = bits_new(10);
        (0..5).for_each(|i| bits_set(&mut half[1].seen, i));
        update_weights(&mut half, 10);
        assert!((half[1].weight / half[0].weight - 0.5).abs() < 1e-12);
        assert!((half.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_weights_reset() {
        let mut ps = vec![particle(0.0, 0.0), particle(1.0, 0.0)];
        ps.iter_mut().for_each(|p| p.seen = bits_new(10));
        assert!(update_weights(&mut ps, 10));
        assert!(ps.iter().all(|p| p.weight == 0.5));
    }

    #[test]
    fn low_variance_resampling_statistics() {
        let mut w = vec![0.01 / 199.0; 200];
        w[17] = 0.99;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let idx = low_variance_resample(&w, 200, &mut rng);
            let c = idx.iter().filter(|&&i| i == 17).count();
            assert!(c >= 190, "{c}");
            // Multinomial mean 198, sd ≈ 1.41.
            assert!((c as f64 - 198.0).abs() <= 3.0 * (200.0f64 * 0.99 * 0.01).sqrt() + 1.0);
        }
        let idx = low_variance_resample(&[1.0, 1.0, 2.0], 4, &mut rng);
        assert_eq!(idx.iter().filter(|&&i| i == 2).count(), 2);
    }

    #[test]
    fn jitter_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Pose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.3, 0.0, -0.2));
        let n = 4000;
        let (mut st, mut sr) = (0.0, 0.0);
        for _ in 0..n {
            let q = jitter_pose(&p, 0.002, 0.02, &mut rng);
            let (dt, dr) = q.distance(&p);
            st += dt * dt;
            sr += dr * dr;
        }
        // E‖N(0, σ²I₃)‖² = 3σ².
        assert!(((st / n as f64).sqrt() - 0.002 * 3f64.sqrt()).abs() < 1e-4);
        assert!(((sr / n as f64).sqrt() - 0.02 * 3f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn modes_by_weight() {
        let mut ps: Vec<Particle> = (0..10).map(|i| particle(0.001 * (i % 2) as f64, 0.0)).collect();
        ps.extend((0..5).map(|_| particle(0.1, 0.0)));
        ps.push(particle(0.5, 0.0));
        ps.iter_mut().for_each(|p| p.weight = 1.0 / 16.0);
        let m = extract_modes(&ps, 0.005, 0.1, 0.1);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].size, 10);
        assert_eq!(m[1].size, 5);
        assert!((m[0].weight - 10.0 / 16.0).abs() < 1e-12);
    }
}
