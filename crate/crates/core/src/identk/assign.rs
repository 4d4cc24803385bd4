//! Exact linear assignment (Hungarian method with potentials), `O(n³)`.

/// Permutation `σ` maximizing `Σ_i score[i][σ(i)]` over a square table.
pub fn max_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    // Minimize -score. Rows and columns are 1-based in the potentials; 0 is a sentinel.
    let cost = |i: usize, j: usize| -score[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            sigma[owner[j] - 1] = j - 1;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(score: &[Vec<f64>], sigma: &[usize]) -> f64 {
        sigma.iter().enumerate().map(|(i, &j)| score[i][j]).sum()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn picks_the_anti_diagonal() {
        let s = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(max_assignment(&s), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..6, seed in proptest::collection::vec(0.0f64..1.0, 36)) {
            let s: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| seed[i * 6 + j]).collect()).collect();
            let best = permutations(n).iter().map(|p| total(&s, p)).fold(f64::NEG_INFINITY, f64::max);
            let sigma = max_assignment(&s);
            let mut seen = sigma.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((total(&s, &sigma) - best).abs() < 1e-12);
        }
    }
}
