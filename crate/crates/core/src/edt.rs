//! Exact Euclidean distance transform (Felzenszwalb and Huttenlocher).

/// Lower envelope of parabolas for one row. `f` holds squared costs (0 at
/// sites, `f64::INFINITY` elsewhere); the result is written to `d`.
/// `v` and `z` are scratch buffers of at least `n` and `n + 1` entries.
pub(crate) fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: usize = 0;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(first) = first else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            // z[0] is -inf, so k never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *dq = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Squared Euclidean distance to the nearest site of a `width × height`
/// binary map (row-major). Pixels are infinitely far when there is no site.
pub fn edt_squared(width: usize, height: usize, sites: &[bool]) -> Vec<f64> {
    assert_eq!(sites.len(), width * height);
    let mut out: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    // Columns.
    for x in 0..width {
        for y in 0..height {
            f[y] = out[y * width + x];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            out[y * width + x] = d[y];
        }
    }
    // Rows.
    for y in 0..height {
        let row = &mut out[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    out
}

/// Euclidean distance to the nearest site.
pub fn edt(width: usize, height: usize, sites: &[bool]) -> Vec<f64> {
    let mut d = edt_squared(width, height, sites);
    d.iter_mut().for_each(|v| *v = v.sqrt());
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(width: usize, height: usize, sites: &[bool]) -> Vec<f64> {
        let pts: Vec<(f64, f64)> = (0..width * height)
            .filter(|&i| sites[i])
            .map(|i| ((i % width) as f64, (i / width) as f64))
            .collect();
        (0..width * height)
            .map(|i| {
                let (x, y) = ((i % width) as f64, (i / width) as f64);
                pts.iter()
                    .map(|(px, py)| (x - px).hypot(y - py))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_site() {
        let mut s = vec![false; 20 * 20];
        s[10 * 20 + 10] = true;
        let d = edt(20, 20, &s);
        assert_eq!(d[14 * 20 + 13], 5.0);
        assert_eq!(d[10 * 20 + 10], 0.0);
    }

    #[test]
    fn no_sites_is_infinite() {
        assert!(edt(5, 4, &[false; 20]).iter().all(|v| v.is_infinite()));
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..24, h in 1usize..24, seeds in proptest::collection::vec(any::<u32>(), 1..12)) {
            let mut s = vec![false; w * h];
            for v in seeds {
                s[v as usize % (w * h)] = true;
            }
            let a = edt(w, h, &s);
            let b = brute(w, h, &s);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
