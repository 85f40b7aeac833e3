//! Difficulty schedule: the cap C ramps linearly over training steps, and
//! per-episode difficulty is sampled uniformly from [1, C].

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub c_min: usize,
    pub c_max: usize,
    pub ramp_start: u64,
    pub ramp_end: u64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            c_min: 2,
            c_max: 10,
            ramp_start: 1_000_000,
            ramp_end: 18_000_000,
        }
    }
}

/// Current difficulty cap:
/// `clamp(c_min + floor((c_max-c_min)*(step-ramp_start)/(ramp_end-ramp_start)), c_min, c_max)`.
pub fn curriculum_level(step: u64, sched: &CurriculumSchedule) -> usize {
    if sched.c_max <= sched.c_min || sched.ramp_end <= sched.ramp_start {
        return sched.c_max.max(sched.c_min);
    }
    let span = (sched.c_max - sched.c_min) as i128;
    let num = (step as i128 - sched.ramp_start as i128) * span;
    let den = (sched.ramp_end - sched.ramp_start) as i128;
    let offset = num.div_euclid(den);
    let level = sched.c_min as i128 + offset;
    level.clamp(sched.c_min as i128, sched.c_max as i128) as usize
}

/// Uniform on {1, ..., c}.
pub fn sample_difficulty<R: Rng + ?Sized>(c: usize, rng: &mut R) -> usize {
    assert!(c >= 1, "difficulty cap must be at least 1");
    rng.gen_range(1..=c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let sched = CurriculumSchedule::default();
        assert_eq!(curriculum_level(0, &sched), 2);
        assert_eq!(curriculum_level(1_000_000, &sched), 2);
        assert_eq!(curriculum_level(9_500_000, &sched), 6);
        assert_eq!(curriculum_level(18_000_000, &sched), 10);
        assert_eq!(curriculum_level(30_000_000, &sched), 10);
    }

    #[test]
    fn schedule_is_monotone() {
        let sched = CurriculumSchedule::default();
        let mut last = 0;
        for step in (0..20_000_000).step_by(250_000) {
            let c = curriculum_level(step, &sched);
            assert!(c >= last, "level decreased at step {step}");
            assert!((sched.c_min..=sched.c_max).contains(&c));
            last = c;
        }
    }

    #[test]
    fn degenerate_schedules_clamp() {
        let flat = CurriculumSchedule {
            c_min: 3,
            c_max: 3,
            ..Default::default()
        };
        assert_eq!(curriculum_level(0, &flat), 3);
        let instant = CurriculumSchedule {
            c_min: 2,
            c_max: 5,
            ramp_start: 10,
            ramp_end: 10,
        };
        assert_eq!(curriculum_level(0, &instant), 5);
    }

    #[test]
    fn difficulty_caps_at_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_difficulty(1, &mut rng), 1);
        for _ in 0..1000 {
            let n = sample_difficulty(10, &mut rng);
            assert!((1..=10).contains(&n));
        }
    }

    #[test]
    fn difficulty_is_uniform_within_5_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = 100_000usize;
        let mut counts = [0usize; 10];
        for _ in 0..samples {
            counts[sample_difficulty(10, &mut rng) - 1] += 1;
        }
        // Binomial(n=1e5, p=0.1): sigma = sqrt(n p (1-p)) ~ 94.87.
        let mean = samples as f64 * 0.1;
        let sigma = (samples as f64 * 0.1 * 0.9).sqrt();
        for (value, &count) in counts.iter().enumerate() {
            let dev = (count as f64 - mean).abs();
            assert!(
                dev < 5.0 * sigma,
                "value {} count {} off by {:.1} sigma",
                value + 1,
                count,
                dev / sigma
            );
        }
    }
}
