//! Non-planning view selection strategies.

use rand::Rng;

use super::particles::bits_get;
use super::render_cache::RenderCache;

/// Uniform choice among unvisited actions.
pub fn random_baseline(visited: &[bool], rng: &mut impl Rng) -> Option<usize> {
    let free: Vec<usize> = (0..visited.len()).filter(|&a| !visited[a]).collect();
    if free.is_empty() {
        return None;
    }
    Some(free[rng.random_range(0..free.len())])
}

/// Unvisited action maximizing `Σ_c Ψ_c · G(c, a)`, where `G` counts the
/// points of candidate `c` visible from `a` and not yet seen in a real view.
/// `visible(c, a)` lists the visible raster ids. Ties go to the lowest index.
pub fn dis_select<'a>(scores: &[f64], seen: &[Vec<u64>], visited: &[bool], visible: impl Fn(usize, usize) -> Option<&'a [u32]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for a in (0..visited.len()).filter(|&a| !visited[a]) {
        let gain: f64 = scores
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let new = visible(c, a).map_or(0, |ids| ids.iter().filter(|&&i| !bits_get(&seen[c], i as usize)).count());
                s * new as f64
            })
            .sum();
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((a, gain));
        }
    }
    best.map(|(a, _)| a)
}

/// [`dis_select`] over the visibility stored in a render cache.
pub fn dis_baseline(scores: &[f64], seen: &[Vec<u64>], visited: &[bool], cache: &RenderCache) -> Option<usize> {
    dis_select(scores, seen, visited, |c, a| cache.get(c, a).map(|v| v.visible.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbv::particles::{bits_new, bits_set};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_baseline(&[true, false, true], &mut rng), Some(1));
        assert_eq!(random_baseline(&[true, true], &mut rng), None);
        let visited = [false, true, false, false, true, false];
        let a: Vec<_> = (0..20).map(|_| random_baseline(&visited, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut counts = [0usize; 6];
        for _ in 0..10_000 {
            counts[random_baseline(&visited, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0);
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for a in [0, 2, 3, 5] {
            assert!((counts[a] as f64 - 2500.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn dis_prefers_the_revealing_view() {
        // Candidate 0 is fully visible from everywhere and already seen;
        // candidate 1 shows up only from action 7.
        let all: Vec<u32> = (0..50).collect();
        let mut seen = vec![bits_new(50), bits_new(50)];
        all.iter().for_each(|&i| bits_set(&mut seen[0], i as usize));
        let vis = |c: usize, a: usize| -> Option<&[u32]> {
            if c == 0 || a == 7 { Some(&all[..]) } else { None }
        };
        let visited = vec![false; 10];
        assert_eq!(dis_select(&[0.9, 0.5], &seen, &visited, vis), Some(7));
        assert_eq!(dis_select(&[1.8, 1.0], &seen, &visited, vis), Some(7));
        let mut v2 = visited.clone();
        v2[7] = true;
        // Nothing new anywhere else: lowest index wins.
        assert_eq!(dis_select(&[0.9, 0.5], &seen, &v2, vis), Some(0));
        let seen_all = vec![seen[0].clone(), seen[0].clone()];
        assert_eq!(dis_select(&[0.9, 0.5], &seen_all, &visited, vis), Some(0));
    }
}
