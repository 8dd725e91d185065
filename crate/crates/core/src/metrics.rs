//! Accuracy, NLL, calibration error and pairwise diversity measures.

use crate::error::{Error, Result};

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 15;

/// Per-sample probability rows (N×K, row-major) and true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes == 0 || labels.is_empty() {
            return Err(Error::InvalidArgument(
                "prediction set needs at least one sample and one class".into(),
            ));
        }
        if probs.len() != labels.len() * classes {
            return Err(Error::Shape(format!(
                "{} probabilities do not form {} rows of {} classes",
                probs.len(),
                labels.len(),
                classes
            )));
        }
        for (i, row) in probs.chunks(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|p| p.is_nan() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} at sample {i} out of range for {classes} classes"
            )));
        }
        Ok(PredictionSet {
            probs,
            labels,
            classes,
        })
    }

    pub fn from_f32(probs: &[f32], labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(probs.iter().map(|&p| p as f64).collect(), labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.classes)
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    fn check_pair(&self, other: &PredictionSet) -> Result<()> {
        if self.len() != other.len() || self.classes != other.classes {
            return Err(Error::Shape(format!(
                "prediction sets differ: {}x{} vs {}x{}",
                self.len(),
                self.classes,
                other.len(),
                other.classes
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(p: &PredictionSet) -> f64 {
    let hits = p
        .rows()
        .zip(p.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / p.len() as f64
}

pub fn nll(p: &PredictionSet) -> f64 {
    let total: f64 = p
        .rows()
        .zip(p.labels())
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / p.len() as f64
}

/// Expected calibration error over `bins` equal-width confidence bins.
///
/// Bin `b` covers `(b/B, (b+1)/B]`; a confidence of exactly 0 falls in the
/// first bin.
pub fn ece(p: &PredictionSet, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    let mut hits = vec![0usize; bins];
    for (row, &y) in p.rows().zip(p.labels()) {
        let k = argmax(row);
        let c = row[k];
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += c;
        hits[b] += usize::from(k == y);
    }
    let n = p.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf[b] / m).abs()
        })
        .sum())
}

/// Mean over samples of the Pearson correlation between the two output rows.
///
/// A row with zero variance contributes 1 when both rows are identical and 0
/// otherwise.
pub fn d_corr(f1: &PredictionSet, f2: &PredictionSet) -> Result<f64> {
    f1.check_pair(f2)?;
    if f1.classes < 2 {
        return Err(Error::InvalidArgument("d_corr needs at least two classes".into()));
    }
    let total: f64 = f1.rows().zip(f2.rows()).map(|(a, b)| pearson(a, b)).sum();
    Ok(total / f1.len() as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / k, b.iter().sum::<f64>() / k);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Fraction of samples whose argmax labels differ.
pub fn d_dis(f1: &PredictionSet, f2: &PredictionSet) -> Result<f64> {
    f1.check_pair(f2)?;
    let diff = f1
        .rows()
        .zip(f2.rows())
        .filter(|(a, b)| argmax(a) != argmax(b))
        .count();
    Ok(diff as f64 / f1.len() as f64)
}

/// Mean over samples of the row-wise `KL(f1 ‖ f2)`, both floored.
pub fn d_kl(f1: &PredictionSet, f2: &PredictionSet) -> Result<f64> {
    f1.check_pair(f2)?;
    let total: f64 = f1
        .rows()
        .zip(f2.rows())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&p, &q)| {
                    let (p, q) = (p.max(PROB_FLOOR), q.max(PROB_FLOOR));
                    p * (p / q).ln()
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / f1.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diversity {
    Corr,
    Dis,
    Kl,
}

impl Diversity {
    pub const ALL: [Diversity; 3] = [Diversity::Corr, Diversity::Dis, Diversity::Kl];

    pub fn name(self) -> &'static str {
        match self {
            Diversity::Corr => "d_corr",
            Diversity::Dis => "d_dis",
            Diversity::Kl => "d_kl",
        }
    }

    pub fn eval(self, f1: &PredictionSet, f2: &PredictionSet) -> Result<f64> {
        match self {
            Diversity::Corr => d_corr(f1, f2),
            Diversity::Dis => d_dis(f1, f2),
            Diversity::Kl => d_kl(f1, f2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseMatrix {
    pub size: usize,
    /// Row-major `size × size`; entry `(i, j)` is `measure(member_i, member_j)`.
    pub values: Vec<f64>,
    /// Mean over ordered pairs `i ≠ j`.
    pub mean: f64,
}

impl PairwiseMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

pub fn pairwise_matrix(members: &[PredictionSet], measure: Diversity) -> Result<PairwiseMatrix> {
    let s = members.len();
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "pairwise diversity needs at least two members, got {s}"
        )));
    }
    let mut values = vec![0.0; s * s];
    let mut sum = 0.0;
    for i in 0..s {
        for j in 0..s {
            let v = measure.eval(&members[i], &members[j])?;
            values[i * s + j] = v;
            if i != j {
                sum += v;
            }
        }
    }
    Ok(PairwiseMatrix {
        size: s,
        values,
        mean: sum / (s * (s - 1)) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[&[f64]], labels: &[usize]) -> PredictionSet {
        let k = rows[0].len();
        PredictionSet::new(rows.concat(), labels.to_vec(), k).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, k: usize) -> PredictionSet {
        let mut probs = Vec::with_capacity(n * k);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|x| x / s));
        }
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        PredictionSet::new(probs, labels, k).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(PredictionSet::new(vec![0.5, 0.4], vec![0], 2).is_err());
        assert!(PredictionSet::new(vec![0.5, 0.5], vec![2], 2).is_err());
        assert!(PredictionSet::new(vec![0.5, 0.5, 1.0], vec![0], 2).is_err());
    }

    #[test]
    fn accuracy_cases() {
        let right = set(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], &[0, 2]);
        assert_eq!(accuracy(&right), 1.0);
        let wrong = set(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], &[1, 0]);
        assert_eq!(accuracy(&wrong), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_set(&mut rng, 20, 4);
        let mut hand = 0;
        for i in 0..20 {
            let row = p.row(i);
            let mut best = 0;
            for k in 0..4 {
                if row[k] > row[best] {
                    best = k;
                }
            }
            hand += usize::from(best == p.labels()[i]);
        }
        assert_eq!(accuracy(&p), hand as f64 / 20.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.25, 0.5]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn nll_cases() {
        let uniform = PredictionSet::new(vec![0.1; 30], vec![0, 4, 9], 10).unwrap();
        assert!((nll(&uniform) - 10f64.ln()).abs() < 1e-12);
        let perfect = set(&[&[0.0, 1.0]], &[1]);
        assert!(nll(&perfect) <= -(1.0 - 1e-12f64).ln());
        let floored = set(&[&[0.0, 1.0]], &[0]);
        assert!((nll(&floored) - 12.0 * 10f64.ln()).abs() < 1e-9);
        let mixed = set(&[&[0.7, 0.2, 0.1], &[0.3, 0.3, 0.4]], &[0, 1]);
        let direct = -(0.7f64.ln() + 0.3f64.ln()) / 2.0;
        assert!((nll(&mixed) - direct).abs() < 1e-15);
    }

    #[test]
    fn ece_cases() {
        let confident = set(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(ece(&confident, 15).unwrap(), 0.0);
        let split = set(&[&[0.9, 0.1], &[0.9, 0.1]], &[0, 1]);
        assert!((ece(&split, 15).unwrap() - 0.4).abs() < 1e-12);
        assert!(ece(&split, 0).is_err());
    }

    #[test]
    fn ece_bin_edges_are_right_closed() {
        // 0.6 sits on the upper edge of bin (0.4, 0.6] when B = 5.
        let p = set(&[&[0.6, 0.4], &[0.8, 0.2]], &[0, 1]);
        // bin (0.4,0.6]: conf 0.6, acc 1; bin (0.6,0.8]: conf 0.8, acc 0
        let want = 0.5 * 0.4 + 0.5 * 0.8;
        assert!((ece(&p, 5).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ece_calibrated_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, k) = (100_000, 10);
        let mut probs = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c: f64 = rng.random_range(0.1..1.0);
            let pred = rng.random_range(0..k);
            for j in 0..k {
                probs.push(if j == pred { c } else { (1.0 - c) / (k - 1) as f64 });
            }
            let label = if rng.random_bool(c) {
                pred
            } else {
                (pred + rng.random_range(1..k)) % k
            };
            labels.push(label);
        }
        let p = PredictionSet::new(probs, labels, k).unwrap();
        assert!(ece(&p, 15).unwrap() < 0.01);
    }

    #[test]
    fn diversity_examples() {
        let a = set(&[&[0.8, 0.2]], &[0]);
        let b = set(&[&[0.2, 0.8]], &[0]);
        assert!((d_corr(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((d_corr(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(d_dis(&a, &a).unwrap(), 0.0);
        assert_eq!(d_dis(&a, &b).unwrap(), 1.0);
        assert_eq!(d_kl(&a, &a).unwrap(), 0.0);

        let one = set(&[&[1.0, 0.0]], &[0]);
        let half = set(&[&[0.5, 0.5]], &[0]);
        assert!((d_kl(&one, &half).unwrap() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_rows() {
        let flat = set(&[&[0.5, 0.5]], &[0]);
        let tilted = set(&[&[0.6, 0.4]], &[0]);
        assert_eq!(d_corr(&flat, &flat).unwrap(), 1.0);
        assert_eq!(d_corr(&flat, &tilted).unwrap(), 0.0);
    }

    #[test]
    fn d_dis_hand_count() {
        let a: Vec<&[f64]> = vec![
            &[0.9, 0.1, 0.0],
            &[0.1, 0.8, 0.1],
            &[0.3, 0.3, 0.4],
            &[0.5, 0.5, 0.0],
            &[0.2, 0.2, 0.6],
            &[0.6, 0.2, 0.2],
            &[0.1, 0.1, 0.8],
            &[0.4, 0.4, 0.2],
            &[0.0, 1.0, 0.0],
            &[0.3, 0.4, 0.3],
        ];
        let b: Vec<&[f64]> = vec![
            &[0.1, 0.9, 0.0], // differ
            &[0.1, 0.8, 0.1],
            &[0.4, 0.3, 0.3], // differ
            &[0.4, 0.6, 0.0], // differ (a ties to 0)
            &[0.2, 0.2, 0.6],
            &[0.6, 0.2, 0.2],
            &[0.1, 0.8, 0.1], // differ
            &[0.5, 0.3, 0.2],
            &[0.0, 1.0, 0.0],
            &[0.3, 0.4, 0.3],
        ];
        let labels = vec![0; 10];
        let (a, b) = (set(&a, &labels), set(&b, &labels));
        assert!((d_dis(&a, &b).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn corr_and_kl_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, k) = (50, 6);
        let a = random_set(&mut rng, n, k);
        let b = random_set(&mut rng, n, k);
        let (mut corr, mut kl) = (0.0, 0.0);
        for i in 0..n {
            let (x, y) = (a.row(i), b.row(i));
            let mx = x.iter().sum::<f64>() / k as f64;
            let my = y.iter().sum::<f64>() / k as f64;
            let cov: f64 = (0..k).map(|j| (x[j] - mx) * (y[j] - my)).sum::<f64>() / k as f64;
            let sx = ((0..k).map(|j| (x[j] - mx).powi(2)).sum::<f64>() / k as f64).sqrt();
            let sy = ((0..k).map(|j| (y[j] - my).powi(2)).sum::<f64>() / k as f64).sqrt();
            corr += cov / (sx * sy);
            kl += (0..k).map(|j| x[j] * (x[j] / y[j]).ln()).sum::<f64>();
        }
        assert!((d_corr(&a, &b).unwrap() - corr / n as f64).abs() < 1e-12);
        assert!((d_kl(&a, &b).unwrap() - kl / n as f64).abs() < 1e-12);
    }

    #[test]
    fn pairwise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_set(&mut rng, 30, 5);
        let same = vec![a.clone(), a.clone(), a.clone()];
        let m = pairwise_matrix(&same, Diversity::Dis).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));

        let b = random_set(&mut rng, 30, 5);
        let two = pairwise_matrix(&[a.clone(), b.clone()], Diversity::Kl).unwrap();
        assert!((two.mean - 0.5 * (d_kl(&a, &b).unwrap() + d_kl(&b, &a).unwrap())).abs() < 1e-15);
        let two = pairwise_matrix(&[a.clone(), b.clone()], Diversity::Corr).unwrap();
        assert_eq!(two.mean, d_corr(&a, &b).unwrap());

        let c = random_set(&mut rng, 30, 5);
        let members = [a, b, c];
        for measure in Diversity::ALL {
            let m = pairwise_matrix(&members, measure).unwrap();
            let mut sum = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let v = measure.eval(&members[i], &members[j]).unwrap();
                    assert_eq!(m.get(i, j), v);
                    if i != j {
                        sum += v;
                    }
                }
            }
            assert!((m.mean - sum / 6.0).abs() < 1e-15);
        }
        assert!(pairwise_matrix(&members[..1], Diversity::Dis).is_err());
    }

    proptest! {
        #[test]
        fn diversity_properties(seed in any::<u64>(), n in 1usize..40, k in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f1 = random_set(&mut rng, n, k);
            let f2 = random_set(&mut rng, n, k);
            let f3 = random_set(&mut rng, n, k);
            prop_assert!((d_corr(&f1, &f2).unwrap() - d_corr(&f2, &f1).unwrap()).abs() < 1e-12);
            prop_assert_eq!(d_dis(&f1, &f2).unwrap(), d_dis(&f2, &f1).unwrap());
            prop_assert!(d_kl(&f1, &f1).unwrap().abs() < 1e-15);
            prop_assert!(d_kl(&f1, &f2).unwrap() >= -1e-12);
            let tri = d_dis(&f1, &f3).unwrap() + d_dis(&f3, &f2).unwrap();
            prop_assert!(d_dis(&f1, &f2).unwrap() <= tri + 1e-12);

            let mean_conf: f64 = f1.rows().map(|r| r[argmax(r)]).sum::<f64>() / n as f64;
            let one_bin = ece(&f1, 1).unwrap();
            prop_assert!((one_bin - (accuracy(&f1) - mean_conf).abs()).abs() < 1e-12);
        }
    }
}
