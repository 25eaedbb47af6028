//! Does the matching cost pick the assignment that minimizes the segmentation loss?
//!
//! The cost scores a matched class with `-p` and a mask with `1 - dice`, while the
//! loss uses `-log p` and a smoothed dice. On random small instances this audit
//! compares the Hungarian assignment with the exhaustive loss minimizer.

use ppk_core::matching::{build_cost, match_sets, Matching, PredictedSegment};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::loss::{seg_loss_value, GroundTruth};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditConfig {
    pub instances: usize,
    pub max_queries: usize,
    pub classes: usize,
    pub pixels: usize,
    pub dice_eps: f64,
    pub no_object_weight: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { instances: 500, max_queries: 6, classes: 4, pixels: 16, dice_eps: 1.0, no_object_weight: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    /// Instances where the cost minimizer also attains the minimum loss.
    pub coincident: usize,
    pub rate: f64,
    /// Largest `loss(cost minimizer) - min loss` seen.
    pub max_loss_gap: f64,
    pub mean_loss_gap: f64,
    /// Instances where the Hungarian cost differed from the exhaustive cost minimum
    /// (always 0 for a correct solver).
    pub solver_mismatches: usize,
}

/// A random instance: `n` soft predictions and `m <= n` targets with disjoint hard
/// masks.
pub fn random_instance(rng: &mut impl Rng, n: usize, m: usize, classes: usize, pixels: usize) -> (Vec<PredictedSegment>, GroundTruth) {
    let preds = (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..=classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            PredictedSegment {
                probs: logits.iter().map(|l| l.exp() / z).collect(),
                mask: (0..pixels).map(|_| rng.gen_range(0.001..0.999)).collect(),
            }
        })
        .collect();
    let owner: Vec<usize> = (0..pixels).map(|_| rng.gen_range(0..=m)).collect();
    let gt = GroundTruth {
        classes: (0..m).map(|_| rng.gen_range(0..classes)).collect(),
        masks: (0..m).map(|j| owner.iter().map(|&o| f64::from(o == j + 1)).collect()).collect(),
    };
    (preds, gt)
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&a);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coincident = 0;
    let mut solver_mismatches = 0;
    let mut max_gap: f64 = 0.0;
    let mut sum_gap = 0.0;
    for _ in 0..cfg.instances {
        let n = rng.gen_range(1..=cfg.max_queries);
        let m = rng.gen_range(0..=n);
        let (preds, gt) = random_instance(&mut rng, n, m, cfg.classes, cfg.pixels);
        let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probs.clone()).collect();
        let masks: Vec<Vec<f64>> = preds.iter().map(|p| p.mask.clone()).collect();
        let cost = build_cost(&preds, &gt.targets())?;
        let chosen = match_sets(&preds, &gt.targets())?;
        let chosen_loss = seg_loss_value(&probs, &masks, &gt, &chosen, cfg.dice_eps, cfg.no_object_weight);

        let mut min_loss = f64::INFINITY;
        let mut min_cost = f64::INFINITY;
        let mut bad = None;
        for_each_permutation(n, |perm| match Matching::new(perm.to_vec(), m) {
            Ok(sigma) => {
                min_cost = min_cost.min(sigma.total_cost(&cost));
                min_loss = min_loss.min(seg_loss_value(&probs, &masks, &gt, &sigma, cfg.dice_eps, cfg.no_object_weight));
            }
            Err(e) => bad = Some(e),
        });
        if let Some(e) = bad {
            return Err(e.into());
        }
        if (chosen.total_cost(&cost) - min_cost).abs() > 1e-9 {
            solver_mismatches += 1;
        }
        let gap = chosen_loss - min_loss;
        if gap <= 1e-12 {
            coincident += 1;
        }
        max_gap = max_gap.max(gap);
        sum_gap += gap.max(0.0);
    }
    let total = cfg.instances.max(1) as f64;
    Ok(AuditReport {
        config: cfg.clone(),
        coincident,
        rate: coincident as f64 / total,
        max_loss_gap: max_gap,
        mean_loss_gap: sum_gap / total,
        solver_mismatches,
    })
}
