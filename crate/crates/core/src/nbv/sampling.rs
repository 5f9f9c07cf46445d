//! Object candidates placed in the workspace, and sampling of plausible
//! scene realizations (subsets of candidates).

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Pose};
use crate::sim::PLAUSIBILITY_MARGIN;
use crate::template::ObjectModel;

/// A detected object hypothesis in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedCandidate {
    pub object_id: String,
    pub model_index: usize,
    /// Object-to-world pose.
    pub pose: Pose,
    pub score: f64,
    pub bounds: Aabb,
}

impl PlacedCandidate {
    pub fn new(models: &[ObjectModel], model_index: usize, pose: Pose, score: f64) -> Self {
        let m = &models[model_index];
        Self {
            object_id: m.id.clone(),
            model_index,
            pose,
            score,
            bounds: Aabb::of_transformed(&m.mesh.vertices, &pose).expect("meshes are non-empty"),
        }
    }
}

/// Unnormalized inclusion weight `exp(−(1 − Ψ)²)`.
#[inline]
pub fn candidate_probability(score: f64) -> f64 {
    (-(1.0 - score).powi(2)).exp()
}

pub fn candidate_probabilities(candidates: &[PlacedCandidate]) -> Vec<f64> {
    let w: Vec<f64> = candidates.iter().map(|c| candidate_probability(c.score)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Two candidates can coexist when their bounding boxes keep the same gap
/// the scene generator enforces.
#[inline]
pub fn plausible_pair(a: &Aabb, b: &Aabb) -> bool {
    !a.intersects(b, PLAUSIBILITY_MARGIN / 2.0)
}

/// A hypothetical scene: a plausible subset of candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRealization {
    /// Candidate indices, ascending.
    pub members: Vec<usize>,
    /// Number of draws the realization was allowed.
    pub k: usize,
}

impl SceneRealization {
    #[inline]
    pub fn contains(&self, c: usize) -> bool {
        self.members.binary_search(&c).is_ok()
    }
}

/// Draws `n_comb` realizations: `K ~ Bin(N_obj, 0.5)`, then up to `K`
/// distinct candidates drawn by probability, each kept only if it is
/// plausible with the members kept so far.
pub fn sample_combinations(candidates: &[PlacedCandidate], n_comb: usize, rng: &mut impl Rng) -> Vec<SceneRealization> {
    let n = candidates.len();
    if n == 0 {
        return vec![SceneRealization { members: Vec::new(), k: 0 }; n_comb];
    }
    let p = candidate_probabilities(candidates);
    let bin = Binomial::new(n as u64, 0.5).expect("valid binomial");
    let mut out = Vec::with_capacity(n_comb);
    let mut drawn = vec![false; n];
    for _ in 0..n_comb {
        let k = bin.sample(rng) as usize;
        drawn.iter_mut().for_each(|d| *d = false);
        let mut members: Vec<usize> = Vec::with_capacity(k);
        let mut left: f64 = 1.0;
        for _ in 0..k {
            // Weighted draw among candidates not drawn yet.
            let mut u = rng.random_range(0.0..left);
            let mut pick = None;
            for i in 0..n {
                if drawn[i] {
                    continue;
                }
                pick = Some(i);
                if u < p[i] {
                    break;
                }
                u -= p[i];
            }
            let i = pick.expect("k never exceeds the candidate count");
            drawn[i] = true;
            left = (left - p[i]).max(0.0);
            if left <= 0.0 {
                left = drawn.iter().zip(&p).filter(|(d, _)| !**d).map(|(_, v)| v).sum();
            }
            if members.iter().all(|&m| plausible_pair(&candidates[m].bounds, &candidates[i].bounds)) {
                members.push(i);
            }
        }
        members.sort_unstable();
        out.push(SceneRealization { members, k });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(x: f64, score: f64) -> PlacedCandidate {
        let models = vec![ObjectModel::with_defaults("c", crate::mesh::shapes::cuboid(0.02, 0.02, 0.02)).unwrap()];
        PlacedCandidate::new(&models, 0, Pose::from_translation(Vector3::new(x, 0.0, 0.01)), score)
    }

    #[test]
    fn probabilities() {
        assert_eq!(candidate_probability(1.0), 1.0);
        assert!((candidate_probability(0.0) - (-1.0f64).exp()).abs() < 1e-15);
        let p = candidate_probabilities(&[cand(0.0, 1.0), cand(0.1, 0.5)]);
        let e = (-0.25f64).exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((p[0] - 0.5622).abs() < 1e-3 && (p[1] - 0.4378).abs() < 1e-3);
    }

    #[test]
    fn single_candidate_inclusion_is_a_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = [cand(0.0, 0.7)];
        let r = sample_combinations(&c, 10_000, &mut rng);
        let hits = r.iter().filter(|s| s.contains(0)).count() as f64;
        assert!(r.iter().all(|s| s.members.len() <= 1));
        // Binomial(10⁴, 0.5): 3σ = 150.
        assert!((hits - 5000.0).abs() < 150.0, "{hits}");
    }

    #[test]
    fn overlapping_candidates_never_coexist() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = [cand(0.0, 0.9), cand(0.0, 0.9), cand(0.1, 0.9)];
        for s in sample_combinations(&c, 2000, &mut rng) {
            assert!(!(s.contains(0) && s.contains(1)));
        }
    }

    #[test]
    fn inclusion_follows_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = [cand(0.0, 1.0), cand(0.1, 0.1)];
        let r = sample_combinations(&c, 10_000, &mut rng);
        let a = r.iter().filter(|s| s.contains(0)).count();
        let b = r.iter().filter(|s| s.contains(1)).count();
        assert!(a > b, "{a} {b}");
    }
}
