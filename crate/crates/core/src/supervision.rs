//! Choice of supervision frames and ray batches.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisionConfig {
    /// Probability of supervising with a temporal frame.
    pub p: f64,
    pub l1_m: f64,
    pub l2_m: f64,
    /// Categorical weights over (current, earlier, later) frames in the temporal branch.
    pub ratio: [f64; 3],
    pub rays_per_step: usize,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig { p: 0.5, l1_m: 1.0, l2_m: 6.4, ratio: [0.0, 1.0, 1.0], rays_per_step: 512 }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("supervision.p = {} outside [0, 1]", self.p)));
        }
        if !(self.l1_m >= 0.0 && self.l1_m < self.l2_m) {
            return Err(Error::Config(format!("supervision window [{}, {}] must satisfy 0 <= l1 < l2", self.l1_m, self.l2_m)));
        }
        if self.ratio.iter().any(|r| !(*r >= 0.0)) || self.ratio.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("supervision.ratio {:?} needs non-negative entries, not all zero", self.ratio)));
        }
        if self.rays_per_step == 0 {
            return Err(Error::Config("supervision.rays_per_step must be positive".into()));
        }
        Ok(())
    }
}

/// Ego distance between two frames (translation only).
pub fn ego_distance(a: &Pose, b: &Pose) -> f64 {
    (a.center() - b.center()).norm()
}

/// Picks the frame that supervises step `t`.
///
/// With probability `p` the temporal branch draws a role from `ratio`
/// (current, earlier, later); earlier/later roles pick uniformly among frames
/// whose ego distance from `t` lies in [l1, l2] and are skipped when empty.
/// Every other case returns `t`.
pub fn select_supervision_frame(t: usize, poses: &[Pose], cfg: &SupervisionConfig, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    if u >= cfg.p {
        return t;
    }
    let within = |j: usize| {
        let d = ego_distance(&poses[t], &poses[j]);
        d >= cfg.l1_m && d <= cfg.l2_m
    };
    let earlier: Vec<usize> = (0..t).filter(|&j| within(j)).collect();
    let later: Vec<usize> = (t + 1..poses.len()).filter(|&j| within(j)).collect();
    let w = [
        cfg.ratio[0],
        if earlier.is_empty() { 0.0 } else { cfg.ratio[1] },
        if later.is_empty() { 0.0 } else { cfg.ratio[2] },
    ];
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return t;
    }
    let r: f64 = rng.random::<f64>() * total;
    let role = if r < w[0] {
        0
    } else if r < w[0] + w[1] || w[2] == 0.0 {
        1
    } else {
        2
    };
    match role {
        1 => earlier[rng.random_range(0..earlier.len())],
        2 => later[rng.random_range(0..later.len())],
        _ => t,
    }
}

/// `n` distinct pixels, uniform without replacement, as (x, y).
pub fn sample_ray_batch(width: usize, height: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<[usize; 2]>> {
    let total = width * height;
    if n > total {
        return Err(Error::domain(format!("{n} rays requested from a {width}x{height} image")));
    }
    let mut idx = sample(rng, total, n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| [i % width, i / width]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, Vec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize, spacing: f64) -> Vec<Pose> {
        (0..n).map(|i| Pose { rotation: Mat3::IDENTITY, translation: Vec3::new(0.0, 0.0, -(i as f64) * spacing) }).collect()
    }

    #[test]
    fn probability_zero_keeps_current() {
        let poses = line(10, 1.0);
        let cfg = SupervisionConfig { p: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..10 {
            for _ in 0..50 {
                assert_eq!(select_supervision_frame(t, &poses, &cfg, &mut rng), t);
            }
        }
    }

    #[test]
    fn single_candidate_always_chosen() {
        let poses = line(10, 1.0);
        let cfg = SupervisionConfig { p: 1.0, l1_m: 2.5, l2_m: 3.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(select_supervision_frame(0, &poses, &cfg, &mut rng), 3);
        }
    }

    #[test]
    fn window_respected_over_many_draws() {
        let poses = line(20, 1.0);
        let cfg = SupervisionConfig { p: 0.7, l1_m: 2.0, l2_m: 4.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 9;
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..10_000 {
            let j = select_supervision_frame(t, &poses, &cfg, &mut rng);
            let d = (j as i64 - t as i64).abs();
            assert!(j == t || (2..=4).contains(&d), "frame {j}");
            seen.insert(j);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![5, 6, 7, 9, 11, 12, 13]);
    }

    #[test]
    fn ratio_current_only() {
        let poses = line(10, 1.0);
        let cfg = SupervisionConfig { p: 1.0, ratio: [1.0, 0.0, 0.0], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(select_supervision_frame(5, &poses, &cfg, &mut rng), 5);
        }
    }

    #[test]
    fn batch_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let all = sample_ray_batch(7, 5, 35, &mut rng).unwrap();
        let mut set: Vec<usize> = all.iter().map(|p| p[1] * 7 + p[0]).collect();
        set.dedup();
        assert_eq!(set, (0..35).collect::<Vec<_>>());
        let a = sample_ray_batch(32, 32, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_ray_batch(32, 32, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_ray_batch(4, 4, 17, &mut rng).is_err());
    }

    #[test]
    fn batch_uniformity_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0f64; 1024];
        let draws = 100_000usize;
        let per = 100;
        for _ in 0..draws / per {
            for p in sample_ray_batch(32, 32, per, &mut rng).unwrap() {
                counts[p[1] * 32 + p[0]] += 1.0;
            }
        }
        let e = draws as f64 / 1024.0;
        let chi: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        // 99th percentile of chi-square with 1023 dof
        assert!(chi < 1131.0, "chi-square {chi}");
    }

    #[test]
    fn config_validation() {
        assert!(SupervisionConfig::default().validate().is_ok());
        assert!(SupervisionConfig { p: 1.5, ..Default::default() }.validate().is_err());
        assert!(SupervisionConfig { l1_m: 3.0, l2_m: 2.0, ..Default::default() }.validate().is_err());
        assert!(SupervisionConfig { ratio: [0.0; 3], ..Default::default() }.validate().is_err());
    }
}
