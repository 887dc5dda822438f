//! Matrix distributions `ν_n`: the law of the distance matrix of `n`
//! independent weight-distributed points, and two-sample tests built on them.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::next_permutation;
use crate::error::{Error, Result};
use crate::spaces::{validate, FiniteSpace};

/// Samples drawn per random stream.
pub const STREAM_CHUNK: usize = 256;
/// Largest `points^n` enumerated exactly.
pub const EXACT_LAW_BOUND: u64 = 10_000;
pub const DEFAULT_RESAMPLES: usize = 200;
pub const DEFAULT_ALPHA: f64 = 0.01;

/// One draw of `(d(x_i, x_j))_{i<j}`, upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSample {
    pub n: usize,
    pub entries: Vec<f64>,
    pub seed: u64,
    pub index: usize,
}

fn upper_entries(x: &FiniteSpace, points: &[usize]) -> Vec<f64> {
    let n = points.len();
    let mut e = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            e.push(x.d(points[i], points[j]));
        }
    }
    e
}

/// `count` independent draws. Stream `k` of the seed produces samples
/// `k·STREAM_CHUNK ..`, so the output does not depend on the worker count.
pub fn sample_matrix_distribution(x: &FiniteSpace, n: usize, count: usize, seed: u64) -> Result<Vec<MatrixSample>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("matrix order {n} must be at least 2")));
    }
    let index = WeightedIndex::new(x.weights()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let chunks = count.div_ceil(STREAM_CHUNK);
    let parts: Vec<Vec<MatrixSample>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let start = c * STREAM_CHUNK;
            let end = (start + STREAM_CHUNK).min(count);
            (start..end)
                .map(|k| {
                    let points: Vec<usize> = (0..n).map(|_| index.sample(&mut rng)).collect();
                    MatrixSample { n, entries: upper_entries(x, &points), seed, index: k }
                })
                .collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// A finite law on upper-triangular matrices, atoms sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixLaw {
    pub n: usize,
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl MatrixLaw {
    pub fn mass_of(&self, entries: &[f64]) -> f64 {
        self.atoms.iter().filter(|(e, _)| e.as_slice() == entries).map(|(_, m)| m).sum()
    }
}

fn key(entries: &[f64]) -> Vec<u64> {
    // +0.0 and −0.0 are the same distance
    entries.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// The exact law `ν_n` by enumerating all `n`-tuples of support points.
pub fn exact_matrix_law(x: &FiniteSpace, n: usize) -> Result<MatrixLaw> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("matrix order {n} must be at least 2")));
    }
    let support = x.support();
    let total = (support.len() as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > EXACT_LAW_BOUND {
        return Err(Error::SizeBound { size: total.min(usize::MAX as u64) as usize, bound: EXACT_LAW_BOUND as usize });
    }
    let mut law: BTreeMap<Vec<u64>, (Vec<f64>, f64)> = BTreeMap::new();
    let mut digits = vec![0usize; n];
    loop {
        let points: Vec<usize> = digits.iter().map(|&d| support[d]).collect();
        let mass: f64 = points.iter().map(|&p| x.w(p)).product();
        let entries = upper_entries(x, &points);
        let slot = law.entry(key(&entries)).or_insert_with(|| (entries, 0.0));
        slot.1 += mass;
        let mut k = 0;
        loop {
            if k == n {
                let mut atoms: Vec<(Vec<f64>, f64)> = law.into_values().collect();
                atoms.sort_by(|a, b| a.0.iter().zip(&b.0).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
                return Ok(MatrixLaw { n, atoms });
            }
            digits[k] += 1;
            if digits[k] < support.len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Total variation distance between two exact laws; entries are matched
/// exactly.
pub fn total_variation(a: &MatrixLaw, b: &MatrixLaw) -> f64 {
    let mut diff: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for (e, m) in &a.atoms {
        *diff.entry(key(e)).or_insert(0.0) += m;
    }
    for (e, m) in &b.atoms {
        *diff.entry(key(e)).or_insert(0.0) -= m;
    }
    0.5 * diff.values().map(|v| v.abs()).sum::<f64>()
}

/// `min_σ ‖a − σ*b‖₂` over relabelings of the `n` points.
pub fn quotient_distance(a: &[f64], b: &[f64], n: usize) -> f64 {
    let index = |i: usize, j: usize| -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    };
    let mut sigma: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = a[index(i, j)] - b[index(sigma[i], sigma[j])];
                s += d * d;
            }
        }
        best = best.min(s);
        if !next_permutation(&mut sigma) {
            break;
        }
    }
    best.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestVerdict {
    #[serde(rename = "REJECT")]
    Reject,
    #[serde(rename = "NO-EVIDENCE")]
    NoEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    ExactLaw,
    EnergyPermutation,
}

/// Outcome of a two-sample comparison of matrix distributions.
///
/// A NO-EVIDENCE verdict is never a claim that the spaces are homomorphic.
/// `metric_inputs` records whether both spaces satisfy the triangle
/// inequality, the only case where equal laws for every order characterize
/// the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomomorphismReport {
    pub method: TestMethod,
    pub n: usize,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub alpha: f64,
    pub verdict: TestVerdict,
    pub metric_inputs: bool,
}

/// Energy distance between two samples under [`quotient_distance`] with a
/// label-permutation p-value.
pub fn energy_permutation_test(a: &[MatrixSample], b: &[MatrixSample], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("both samples must be nonempty".into()));
    }
    let n = a[0].n;
    if a.iter().chain(b).any(|s| s.n != n) {
        return Err(Error::Shape("samples have different orders".into()));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|s| s.entries.as_slice()).collect();
    let total = pooled.len();
    let dist: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| (0..total).map(|j| if i == j { 0.0 } else { quotient_distance(pooled[i], pooled[j], n) }).collect())
        .collect();
    let labels: Vec<bool> = (0..total).map(|i| i < a.len()).collect();
    let observed = energy_statistic(&dist, &labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let shuffles: Vec<Vec<bool>> = (0..resamples)
        .map(|_| {
            let mut l = labels.clone();
            l.shuffle(&mut rng);
            l
        })
        .collect();
    let exceed = shuffles.par_iter().filter(|l| energy_statistic(&dist, l) >= observed).count();
    Ok((observed, (1 + exceed) as f64 / (1 + resamples) as f64))
}

fn energy_statistic(dist: &[Vec<f64>], labels: &[bool]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    let na = labels.iter().filter(|&&l| l).count() as f64;
    let nb = labels.len() as f64 - na;
    for (i, row) in dist.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            match (labels[i], labels[j]) {
                (true, true) => aa += d,
                (false, false) => bb += d,
                _ => ab += d,
            }
        }
    }
    // ab counts each cross pair twice
    ab / (na * nb) - aa / (na * na) - bb / (nb * nb)
}

/// Compares `ν_n` of two spaces. Uses the exact laws when both are small
/// enough to enumerate, and the sampled energy test otherwise.
pub fn empirical_homomorphism_test(
    x0: &FiniteSpace,
    x1: &FiniteSpace,
    n: usize,
    count: usize,
    seed: u64,
    resamples: usize,
    alpha: f64,
) -> Result<HomomorphismReport> {
    let metric_inputs = validate(x0).satisfies_triangle() && validate(x1).satisfies_triangle();
    if let (Ok(a), Ok(b)) = (exact_matrix_law(x0, n), exact_matrix_law(x1, n)) {
        let tv = total_variation(&a, &b);
        let verdict = if tv > 1e-12 { TestVerdict::Reject } else { TestVerdict::NoEvidence };
        return Ok(HomomorphismReport { method: TestMethod::ExactLaw, n, statistic: tv, p_value: None, alpha, verdict, metric_inputs });
    }
    sampled_homomorphism_test(x0, x1, n, count, seed, resamples, alpha)
}

/// The sampled energy test, regardless of size.
pub fn sampled_homomorphism_test(
    x0: &FiniteSpace,
    x1: &FiniteSpace,
    n: usize,
    count: usize,
    seed: u64,
    resamples: usize,
    alpha: f64,
) -> Result<HomomorphismReport> {
    let metric_inputs = validate(x0).satisfies_triangle() && validate(x1).satisfies_triangle();
    let a = sample_matrix_distribution(x0, n, count, seed)?;
    let b = sample_matrix_distribution(x1, n, count, seed.wrapping_add(1))?;
    let (statistic, p) = energy_permutation_test(&a, &b, resamples, seed)?;
    let verdict = if p <= alpha { TestVerdict::Reject } else { TestVerdict::NoEvidence };
    Ok(HomomorphismReport { method: TestMethod::EnergyPermutation, n, statistic, p_value: Some(p), alpha, verdict, metric_inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::split_atoms;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn delta_gives_zero_matrices() {
        let s = sample_matrix_distribution(&FiniteSpace::delta(), 3, 50, 1).unwrap();
        assert!(s.iter().all(|m| m.entries == vec![0.0; 3]));
    }

    #[test]
    fn k2_frequency_within_three_sigma() {
        let count = 4000;
        let s = sample_matrix_distribution(&FiniteSpace::complete_graph(2), 2, count, 9).unwrap();
        let ones = s.iter().filter(|m| m.entries[0] == 1.0).count() as f64;
        let sigma = (count as f64 * 0.25).sqrt();
        assert!((ones - count as f64 / 2.0).abs() <= 3.0 * sigma);
    }

    #[test]
    fn sampling_is_deterministic() {
        let x = FiniteSpace::discrete_circle(5);
        let a = sample_matrix_distribution(&x, 3, 700, 42).unwrap();
        let b = sample_matrix_distribution(&x, 3, 700, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_matrix_distribution(&x, 3, 700, 43).unwrap();
        assert_ne!(a, c);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let d = pool.install(|| sample_matrix_distribution(&x, 3, 700, 42).unwrap());
        assert_eq!(a, d);
    }

    #[test]
    fn exact_laws_of_complete_graphs() {
        let k2 = exact_matrix_law(&FiniteSpace::complete_graph(2), 2).unwrap();
        let k3 = exact_matrix_law(&FiniteSpace::complete_graph(3), 2).unwrap();
        assert_eq!(k2.mass_of(&[0.0]), 0.5);
        assert!((k3.mass_of(&[0.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((total_variation(&k2, &k3) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn split_atoms_are_indistinguishable() {
        let x = FiniteSpace::new(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0]), vec![0.5, 0.25, 0.25]).unwrap();
        let y = split_atoms(&x, 8).unwrap();
        let r = empirical_homomorphism_test(&x, &y, 2, 0, 0, DEFAULT_RESAMPLES, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.method, TestMethod::ExactLaw);
        assert_eq!(r.verdict, TestVerdict::NoEvidence);
        assert!(r.statistic <= 1e-15);
    }

    #[test]
    fn sampled_test_separates_k2_and_k3() {
        let r = sampled_homomorphism_test(&FiniteSpace::complete_graph(2), &FiniteSpace::complete_graph(3), 2, 1000, 5, DEFAULT_RESAMPLES, DEFAULT_ALPHA)
            .unwrap();
        assert_eq!(r.verdict, TestVerdict::Reject);
        let r = empirical_homomorphism_test(&FiniteSpace::complete_graph(2), &FiniteSpace::complete_graph(3), 2, 0, 0, DEFAULT_RESAMPLES, DEFAULT_ALPHA)
            .unwrap();
        assert_eq!(r.verdict, TestVerdict::Reject);
    }

    #[test]
    fn sampled_test_on_same_law() {
        let x = FiniteSpace::discrete_circle(4);
        let r = sampled_homomorphism_test(&x, &split_atoms(&x, 8).unwrap(), 3, 300, 17, DEFAULT_RESAMPLES, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.verdict, TestVerdict::NoEvidence);
    }

    #[test]
    fn quotient_distance_ignores_labels() {
        let a = [1.0, 2.0, 3.0];
        let b = [3.0, 2.0, 1.0];
        assert_eq!(quotient_distance(&a, &b, 3), 0.0);
        assert!((quotient_distance(&[0.0], &[2.0], 2) - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn exact_law_is_relabel_invariant(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..6);
            let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64]).collect();
            let x = FiniteSpace::from_points(&points).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let y = x.relabel(&perm).unwrap();
            let a = exact_matrix_law(&x, 2).unwrap();
            let b = exact_matrix_law(&y, 2).unwrap();
            prop_assert!(total_variation(&a, &b) <= 1e-15);
        }
    }
}
