use crate::error::{Error, Result};

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Facility-location objective `F(S) = sum_q max_{s in S} sim(q, s)` with
/// `sim = (1 + cos) / 2`, which keeps `F` non-negative, monotone and
/// submodular while ranking pairs exactly as cosine does. `F(∅) = 0`.
pub fn facility_location_value(candidates: &[Vec<f64>], subset: &[usize]) -> f64 {
    let norms: Vec<f64> = candidates.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    candidates
        .iter()
        .enumerate()
        .map(|(q, cq)| {
            subset
                .iter()
                .map(|&s| 0.5 * (1.0 + cosine(cq, &candidates[s], norms[q], norms[s])))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Greedy facility-location selection of `k` representatives. Returns
/// indices in the order they were picked; ties go to the lowest index.
pub fn facility_location_select(candidates: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = candidates.len();
    if k == 0 || k > n {
        return Err(Error::Shape(format!("cannot select {k} of {n} candidates")));
    }
    let dim = candidates[0].len();
    if candidates.iter().any(|c| c.len() != dim) {
        return Err(Error::Shape("candidate embeddings differ in length".into()));
    }
    let norms: Vec<f64> = candidates.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NumericDomain(format!("candidate {i} is a zero or non-finite vector")));
    }
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|q| {
            (0..n)
                .map(|s| 0.5 * (1.0 + cosine(&candidates[q], &candidates[s], norms[q], norms[s])))
                .collect()
        })
        .collect();

    let mut best = vec![0.0f64; n];
    let mut chosen = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut arg = None;
        let mut arg_gain = f64::NEG_INFINITY;
        for c in (0..n).filter(|&c| !chosen[c]) {
            let gain: f64 = (0..n).map(|q| (sim[q][c] - best[q]).max(0.0)).sum();
            if gain > arg_gain {
                arg_gain = gain;
                arg = Some(c);
            }
        }
        let c = arg.expect("k <= n leaves an unchosen candidate");
        chosen[c] = true;
        picked.push(c);
        for q in 0..n {
            best[q] = best[q].max(sim[q][c]);
        }
    }
    Ok(picked)
}
