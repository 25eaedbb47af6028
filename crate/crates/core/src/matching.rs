//! Bipartite matching between N mask predictions and M ground-truth segments.
//!
//! The ground truth is padded with N−M "no object" slots so the problem is square.
//! The cost of assigning prediction `i` to a real target `j` is
//! `-p_i(c_j) + (1 - dice(m_i, m_j))` on soft masks; assigning it to a padding slot
//! costs `-p_i(∅)` with no mask term, mirroring the loss the matching feeds.

use crate::{Error, Result};

/// One prediction: a distribution over `C + 1` classes (the last is no-object) and a
/// soft mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSegment {
    pub probs: Vec<f64>,
    pub mask: Vec<f64>,
}

/// One ground-truth segment: a class in `0..C` and a hard mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSegment {
    pub class: usize,
    pub mask: Vec<f64>,
}

/// Square cost matrix, row = prediction, column = ground-truth slot. Columns
/// `targets..n` are no-object padding.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    targets: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// Wraps a dense row-major square matrix in which every column is a real target.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("cost matrix must be square".into()));
        }
        Ok(CostMatrix { n, targets: n, entries: rows.concat() })
    }

    /// Parses `[[..], ..]` or `{"rows": [[..], ..], "targets": k}`. With `targets`,
    /// columns `k..n` are no-object padding.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Rows(Vec<Vec<f64>>),
            Object {
                rows: Vec<Vec<f64>>,
                targets: Option<usize>,
            },
        }
        let (rows, targets) = match serde_json::from_slice::<Doc>(bytes)? {
            Doc::Rows(rows) => (rows, None),
            Doc::Object { rows, targets } => (rows, targets),
        };
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Input("cost entries must be finite".into()));
        }
        let mut m = CostMatrix::from_rows(&rows)?;
        if let Some(t) = targets {
            if t > m.n {
                return Err(Error::Input(format!("{t} targets exceed matrix size {}", m.n)));
            }
            m.targets = t;
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn get(&self, pred: usize, slot: usize) -> f64 {
        self.entries[pred * self.n + slot]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// `sigma[j]` is the prediction assigned to slot `j`; slots at or beyond `targets`
/// are no-object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    pub sigma: Vec<usize>,
    pub targets: usize,
}

impl Matching {
    pub fn new(sigma: Vec<usize>, targets: usize) -> Result<Self> {
        let n = sigma.len();
        let mut seen = vec![false; n];
        for &i in &sigma {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Input(format!("{sigma:?} is not a permutation")));
            }
        }
        if targets > n {
            return Err(Error::Input("more targets than slots".into()));
        }
        Ok(Matching { sigma, targets })
    }

    /// Target slot of each prediction (`None` for no-object).
    pub fn target_of_prediction(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.sigma.len()];
        for (j, &i) in self.sigma.iter().enumerate() {
            if j < self.targets {
                out[i] = Some(j);
            }
        }
        out
    }

    /// Sum of `cost(sigma(j), j)` over slots, accumulated in slot order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.sigma.iter().enumerate().map(|(j, &i)| cost.get(i, j)).sum()
    }
}

/// Dice coefficient on soft masks, `2 Σ m g / (Σ m + Σ g)`; 1 when both are empty.
pub fn soft_dice(m: &[f64], g: &[f64]) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (a, b) in m.iter().zip(g) {
        inter += a * b;
        total += a + b;
    }
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

pub fn build_cost(preds: &[PredictedSegment], gts: &[TargetSegment]) -> Result<CostMatrix> {
    let n = preds.len();
    if gts.len() > n {
        return Err(Error::Capacity { predictions: n, targets: gts.len() });
    }
    let Some(first) = preds.first() else {
        return Ok(CostMatrix { n: 0, targets: 0, entries: Vec::new() });
    };
    let classes = first.probs.len();
    let pixels = first.mask.len();
    if classes < 1 {
        return Err(Error::Shape("class distributions must include the no-object class".into()));
    }
    let no_object = classes - 1;
    for (i, p) in preds.iter().enumerate() {
        if p.probs.len() != classes || p.mask.len() != pixels {
            return Err(Error::Shape(format!("prediction {i} has inconsistent shape")));
        }
        let sum: f64 = p.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.probs.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Input(format!("prediction {i} is not a distribution (sums to {sum})")));
        }
    }
    for (j, g) in gts.iter().enumerate() {
        if g.mask.len() != pixels {
            return Err(Error::Shape(format!("target {j} mask has {} pixels, expected {pixels}", g.mask.len())));
        }
        if g.class >= no_object {
            return Err(Error::Input(format!("target {j} class {} out of range", g.class)));
        }
    }
    let mut entries = Vec::with_capacity(n * n);
    for p in preds {
        for j in 0..n {
            entries.push(match gts.get(j) {
                Some(g) => -p.probs[g.class] + (1.0 - soft_dice(&p.mask, &g.mask)),
                None => -p.probs[no_object],
            });
        }
    }
    Ok(CostMatrix { n, targets: gts.len(), entries })
}

/// Exact minimum-cost assignment (shortest augmenting paths with potentials, O(n³)).
///
/// Slots are inserted one at a time in index order and every argmin scan keeps the
/// first minimum, so the result is a pure function of the matrix.
pub fn hungarian(cost: &CostMatrix) -> Result<Matching> {
    let n = cost.n;
    if cost.entries.iter().any(|c| !c.is_finite()) {
        return Err(Error::Input("cost matrix has non-finite entries".into()));
    }
    // 1-based; "rows" are slots, "columns" are predictions.
    let a = |slot: usize, pred: usize| cost.get(pred - 1, slot - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1]; // owner[pred] = slot
    let mut way = vec![0usize; n + 1];
    for slot in 1..=n {
        owner[0] = slot;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    for pred in 1..=n {
        sigma[owner[pred] - 1] = pred - 1;
    }
    Matching::new(sigma, cost.targets)
}

pub fn match_sets(preds: &[PredictedSegment], gts: &[TargetSegment]) -> Result<Matching> {
    hungarian(&build_cost(preds, gts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cost_json_forms() {
        let a = CostMatrix::from_json(b"[[1, 2], [3, 4]]").unwrap();
        assert_eq!((a.size(), a.targets()), (2, 2));
        let b = CostMatrix::from_json(br#"{"rows": [[1, 2], [3, 4]], "targets": 1}"#).unwrap();
        assert_eq!((b.rows(), b.targets()), (a.rows(), 1));
        assert!(CostMatrix::from_json(b"[[1, 2], [3]]").is_err());
        assert!(CostMatrix::from_json(br#"{"rows": [[1]], "targets": 2}"#).is_err());
        assert!(CostMatrix::from_json(b"[[1e999]]").is_err());
        assert_eq!(CostMatrix::from_json(b"[]").unwrap().size(), 0);
    }

    fn brute_force_min(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, j: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.size();
            if j == n {
                *best = best.min(acc);
                return;
            }
            for i in 0..n {
                if !used[i] {
                    used[i] = true;
                    rec(cost, j + 1, used, acc + cost.get(i, j), best);
                    used[i] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.size()], 0.0, &mut best);
        best
    }

    fn pred(probs: &[f64], mask: &[f64]) -> PredictedSegment {
        PredictedSegment { probs: probs.to_vec(), mask: mask.to_vec() }
    }

    #[test]
    fn two_by_two_example() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let m = hungarian(&c).unwrap();
        assert_eq!(m.sigma, vec![0, 1]);
        assert_eq!(m.total_cost(&c), 1.0);
    }

    #[test]
    fn diagonal_dominant_gives_identity() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..6).map(|j| if i == j { -10.0 } else { (i * 7 + j) as f64 }).collect())
            .collect();
        let m = hungarian(&CostMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(m.sigma, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_non_finite() {
        let c = CostMatrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(matches!(hungarian(&c), Err(Error::Input(_))));
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            for _ in 0..100 {
                let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                let c = CostMatrix::from_rows(&rows).unwrap();
                assert_eq!(hungarian(&c).unwrap().total_cost(&c), brute_force_min(&c));
            }
        }
    }

    #[test]
    fn row_shift_keeps_unique_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut rows: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let before = hungarian(&CostMatrix::from_rows(&rows).unwrap()).unwrap();
            let k = rng.gen_range(0..5);
            rows[k].iter_mut().for_each(|x| *x += 3.25);
            let after = hungarian(&CostMatrix::from_rows(&rows).unwrap()).unwrap();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn cost_examples() {
        let g = TargetSegment { class: 0, mask: vec![1.0, 1.0, 0.0, 0.0] };
        let perfect = pred(&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0]);
        let wrong = pred(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]);
        let half = pred(&[0.5, 0.0, 0.5], &[1.0, 0.0, 1.0, 0.0]);
        let c = build_cost(&[perfect, wrong, half], &[g]).unwrap();
        assert_eq!(c.get(0, 0), -1.0);
        assert_eq!(c.get(1, 0), 1.0);
        assert_eq!(c.get(2, 0), 0.0);
        // padding slots only see the no-object probability
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 2), -1.0);
        assert_eq!(c.get(2, 1), -0.5);
    }

    #[test]
    fn capacity_and_shape_errors() {
        let g = TargetSegment { class: 0, mask: vec![1.0] };
        let p = pred(&[0.5, 0.5], &[1.0]);
        assert!(matches!(build_cost(&[p.clone()], &[g.clone(), g.clone()]), Err(Error::Capacity { .. })));
        let bad = TargetSegment { class: 0, mask: vec![1.0, 0.0] };
        assert!(matches!(build_cost(&[p], &[bad]), Err(Error::Shape(_))));
    }

    #[test]
    fn match_sets_examples() {
        let g0 = TargetSegment { class: 0, mask: vec![1.0, 0.0, 0.0] };
        let g1 = TargetSegment { class: 1, mask: vec![0.0, 1.0, 1.0] };
        let p_for_g1 = pred(&[0.1, 0.8, 0.1], &[0.0, 0.9, 0.9]);
        let p_for_g0 = pred(&[0.9, 0.05, 0.05], &[0.95, 0.1, 0.0]);
        let m = match_sets(&[p_for_g1.clone(), p_for_g0.clone()], &[g0.clone(), g1]).unwrap();
        assert_eq!(m.sigma, vec![1, 0]);

        let empty = match_sets(&[p_for_g0.clone(), p_for_g1.clone()], &[]).unwrap();
        assert_eq!(empty.targets, 0);
        assert_eq!(empty.target_of_prediction(), vec![None, None]);

        let other = pred(&[0.2, 0.2, 0.6], &[0.0, 0.5, 0.5]);
        let m = match_sets(&[other, p_for_g0], &[g0]).unwrap();
        assert_eq!(m.target_of_prediction(), vec![None, Some(0)]);
    }

    #[test]
    fn deterministic_on_ties() {
        let c = CostMatrix::from_rows(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let a = hungarian(&c).unwrap();
        for _ in 0..5 {
            assert_eq!(hungarian(&c).unwrap(), a);
        }
    }
}
