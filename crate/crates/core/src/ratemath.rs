//! Storage counts, compression ratios, and complex-patch allocation.
//!
//! All ratios here are over stored *values*: a rank-`k` factorization of an
//! `m x n` block stores `k (m + n + 1)` numbers against `m n` originals.
//! Byte-level ratios live with the archive format.

use std::fmt;

use thiserror::Error;

use crate::patching::PatchGrid;
use crate::scoring::ScoreFunction;

/// Parameters of one compression run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    /// Patch width.
    pub p_x: usize,
    /// Patch height.
    pub p_y: usize,
    /// Rank kept for complex patches.
    pub k_c: usize,
    /// Rank kept for simple patches.
    pub k_s: usize,
    /// Requested compression ratio in `[0, 1)`.
    pub target_cr: f64,
    pub score_fn: ScoreFunction,
    /// Rank of the global approximation subtracted to form the residual.
    pub base_rank: usize,
}

impl CodecConfig {
    /// Square patches with the default ranks for that size.
    pub fn square(patch: usize, target_cr: f64) -> Self {
        Self::with_default_ranks(patch, patch, target_cr)
    }

    /// `k_s = 1` and `k_c` at the largest rank that still compresses a
    /// full patch, capped by the patch's smaller side.
    pub fn with_default_ranks(p_x: usize, p_y: usize, target_cr: f64) -> Self {
        Self {
            p_x,
            p_y,
            k_c: default_complex_rank(p_x, p_y),
            k_s: 1,
            target_cr,
            score_fn: ScoreFunction::Std,
            base_rank: 1,
        }
    }

    pub fn ranks(mut self, k_c: usize, k_s: usize) -> Self {
        self.k_c = k_c;
        self.k_s = k_s;
        self
    }

    pub fn score(mut self, f: ScoreFunction) -> Self {
        self.score_fn = f;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = validate(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }

    /// Values stored per full patch per unit of rank.
    pub fn patch_cost(&self) -> usize {
        self.p_x + self.p_y + 1
    }

    pub fn patch_area(&self) -> usize {
        self.p_x * self.p_y
    }
}

pub fn default_complex_rank(p_x: usize, p_y: usize) -> usize {
    let ceiling = (p_x * p_y) / (p_x + p_y + 1);
    ceiling.min(p_x.min(p_y))
}

/// A broken feasibility condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PatchSizeZero,
    RankNotPositive {
        name: &'static str,
    },
    TargetOutOfRange {
        target_cr: f64,
    },
    /// `k_s` is above `P_x P_y / (P_x + P_y + 1)`: even all-simple patches
    /// would store more values than they replace.
    SimpleRankTooHigh {
        k_s: usize,
        capacity: f64,
    },
    /// `k_c < k_s`.
    ComplexBelowSimple {
        k_c: usize,
        k_s: usize,
    },
    /// Square patch smaller than `k_s + sqrt(k_s^2 + k_s)`.
    PatchBelowLowerBound {
        patch: usize,
        k_s: usize,
        bound: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PatchSizeZero => write!(f, "patch dimensions must be at least 1"),
            Violation::RankNotPositive { name } => write!(f, "{name} must be at least 1"),
            Violation::TargetOutOfRange { target_cr } => {
                write!(
                    f,
                    "target compression ratio must lie in [0, 1), got {target_cr}"
                )
            }
            Violation::SimpleRankTooHigh { k_s, capacity } => write!(
                f,
                "simple rank k_s = {k_s} exceeds P_x*P_y/(P_x+P_y+1) = {capacity:.4}; \
                 a patch at that rank stores more values than it replaces"
            ),
            Violation::ComplexBelowSimple { k_c, k_s } => {
                write!(
                    f,
                    "complex rank k_c = {k_c} must be >= simple rank k_s = {k_s}"
                )
            }
            Violation::PatchBelowLowerBound { patch, k_s, bound } => write!(
                f,
                "square patch size {patch} is below the lower bound \
                 P >= k_s + sqrt(k_s^2 + k_s) = {bound:.4} for k_s = {k_s}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", render_violations(.violations))]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

fn render_violations(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("infeasible configuration: {}", parts.join("; "))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("rank {k} outside 1..={max}")]
    InvalidRank { k: usize, max: usize },
    #[error("k_c equals k_s, complex fraction is undefined; use the uniform path")]
    DegenerateAllocation,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(
        "target compression ratio {target_cr} is unreachable: \
         a rank-1 approximation of the whole image only reaches {best_cr:.4}"
    )]
    Infeasible { target_cr: f64, best_cr: f64 },
}

/// Values needed to store a rank-`k` factorization of an `m x n` matrix.
pub fn storage_svd(m: usize, n: usize, k: usize) -> Result<usize, RateError> {
    let max = m.min(n);
    if k == 0 || k > max {
        return Err(RateError::InvalidRank { k, max });
    }
    Ok(k * (m + n + 1))
}

/// Values stored by `n_c` complex and `n_s` simple full patches.
pub fn storage_patchsvd(
    p_x: usize,
    p_y: usize,
    n_c: usize,
    n_s: usize,
    k_c: usize,
    k_s: usize,
) -> usize {
    (p_x + p_y + 1) * (n_c * k_c + n_s * k_s)
}

/// `1 - stored / original` for a grid of full patches.
pub fn compression_ratio(
    p_x: usize,
    p_y: usize,
    n_c: usize,
    n_s: usize,
    k_c: usize,
    k_s: usize,
) -> f64 {
    let stored = storage_patchsvd(p_x, p_y, n_c, n_s, k_c, k_s) as f64;
    let original = (p_x * p_y * (n_c + n_s)) as f64;
    1.0 - stored / original
}

/// Share of patches, `n_c / t`, that can be complex at the target ratio.
/// Can be negative or exceed 1; the planner clamps.
pub fn complex_fraction(cfg: &CodecConfig) -> Result<f64, RateError> {
    if cfg.k_c == cfg.k_s {
        return Err(RateError::DegenerateAllocation);
    }
    let budget = cfg.patch_area() as f64 * (1.0 - cfg.target_cr) / cfg.patch_cost() as f64;
    Ok((budget - cfg.k_s as f64) / (cfg.k_c as f64 - cfg.k_s as f64))
}

/// Smallest square patch side that can compress at simple rank `k_s`.
pub fn square_patch_lower_bound(k_s: usize) -> f64 {
    let k = k_s as f64;
    k + (k * k + k).sqrt()
}

/// Every broken condition of `cfg`; empty when feasible.
pub fn validate(cfg: &CodecConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if cfg.p_x == 0 || cfg.p_y == 0 {
        out.push(Violation::PatchSizeZero);
    }
    for (name, v) in [
        ("k_s", cfg.k_s),
        ("k_c", cfg.k_c),
        ("base_rank", cfg.base_rank),
    ] {
        if v == 0 {
            out.push(Violation::RankNotPositive { name });
        }
    }
    if !(cfg.target_cr >= 0.0 && cfg.target_cr < 1.0) {
        out.push(Violation::TargetOutOfRange {
            target_cr: cfg.target_cr,
        });
    }
    if cfg.p_x > 0 && cfg.p_y > 0 && cfg.patch_area() < cfg.k_s * cfg.patch_cost() {
        out.push(Violation::SimpleRankTooHigh {
            k_s: cfg.k_s,
            capacity: cfg.patch_area() as f64 / cfg.patch_cost() as f64,
        });
    }
    if cfg.k_c < cfg.k_s {
        out.push(Violation::ComplexBelowSimple {
            k_c: cfg.k_c,
            k_s: cfg.k_s,
        });
    }
    if cfg.p_x == cfg.p_y && cfg.p_x > 0 {
        let bound = square_patch_lower_bound(cfg.k_s);
        if (cfg.p_x as f64) < bound {
            out.push(Violation::PatchBelowLowerBound {
                patch: cfg.p_x,
                k_s: cfg.k_s,
                bound,
            });
        }
    }
    out
}

/// Whole-image rank that meets `cr`: `floor((1 - cr) m n / (m + n + 1))`,
/// clamped to `[1, min(m, n)]`.
pub fn fallback_rank(cr: f64, m: usize, n: usize) -> usize {
    raw_fallback_rank(cr, m, n).clamp(1, m.min(n).max(1))
}

fn raw_fallback_rank(cr: f64, m: usize, n: usize) -> usize {
    let v = (1.0 - cr) * (m * n) as f64 / (m + n + 1) as f64;
    v.floor().max(0.0) as usize
}

/// How the codec will spend its budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePlan {
    pub n_c: usize,
    pub n_s: usize,
    /// Value-count ratio implied by the plan for full-size patches.
    pub achieved_cr: f64,
    /// Whole-image SVD instead of patches.
    pub fallback: bool,
    /// Whole-image rank; 0 unless `fallback`.
    pub fallback_rank: usize,
    /// `k_c == k_s`: every patch gets the same rank and the target is not
    /// used for allocation.
    pub uniform: bool,
}

impl RatePlan {
    pub fn total(&self) -> usize {
        self.n_c + self.n_s
    }
}

/// Decides `n_c` for the grid, or the whole-image fallback.
pub fn plan(cfg: &CodecConfig, grid: &PatchGrid) -> Result<RatePlan, RateError> {
    cfg.validate()?;
    let t = grid.len();
    let (m, n) = (grid.image_rows, grid.image_cols);

    if cfg.k_c == cfg.k_s {
        return Ok(RatePlan {
            n_c: 0,
            n_s: t,
            achieved_cr: compression_ratio(cfg.p_x, cfg.p_y, 0, t, cfg.k_c, cfg.k_s),
            fallback: false,
            fallback_rank: 0,
            uniform: true,
        });
    }

    let fraction = complex_fraction(cfg)?;
    let mut n_c = if fraction <= 0.0 {
        0
    } else {
        ((fraction * t as f64).floor() as usize).min(t)
    };
    // Floating point can land floor() one patch too high.
    while n_c > 0
        && compression_ratio(cfg.p_x, cfg.p_y, n_c, t - n_c, cfg.k_c, cfg.k_s) < cfg.target_cr
    {
        n_c -= 1;
    }

    if n_c < 1 {
        let raw = raw_fallback_rank(cfg.target_cr, m, n);
        if raw < 1 {
            return Err(RateError::Infeasible {
                target_cr: cfg.target_cr,
                best_cr: 1.0 - (m + n + 1) as f64 / (m * n) as f64,
            });
        }
        let rank = raw.min(m.min(n));
        return Ok(RatePlan {
            n_c: 0,
            n_s: 0,
            achieved_cr: 1.0 - (rank * (m + n + 1)) as f64 / (m * n) as f64,
            fallback: true,
            fallback_rank: rank,
            uniform: false,
        });
    }

    Ok(RatePlan {
        n_c,
        n_s: t - n_c,
        achieved_cr: compression_ratio(cfg.p_x, cfg.p_y, n_c, t - n_c, cfg.k_c, cfg.k_s),
        fallback: false,
        fallback_rank: 0,
        uniform: false,
    })
}

/// Widest gap between the target and achieved ratio caused by rounding
/// `n_c` to a whole patch.
pub fn quantization_bound(cfg: &CodecConfig, t: usize) -> f64 {
    (cfg.k_c - cfg.k_s) as f64 * cfg.patch_cost() as f64 / (cfg.patch_area() * t) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(p: usize, k_c: usize, k_s: usize, cr: f64) -> CodecConfig {
        CodecConfig::square(p, cr).ranks(k_c, k_s)
    }

    #[test]
    fn storage_examples() {
        assert_eq!(storage_svd(512, 768, 1).unwrap(), 1281);
        assert_eq!(storage_svd(512, 768, 30).unwrap(), 38430);
        assert!(storage_svd(512, 768, 0).is_err());
        assert!(storage_svd(4, 5, 5).is_err());

        assert_eq!(
            storage_patchsvd(768, 512, 1, 0, 7, 7),
            storage_svd(512, 768, 7).unwrap()
        );
        assert_eq!(storage_patchsvd(16, 16, 10, 90, 4, 1), 4290);
        assert_eq!(storage_patchsvd(16, 16, 0, 30, 3, 3), 33 * 3 * 30);
    }

    #[test]
    fn ratio_examples() {
        let cr = compression_ratio(16, 16, 10, 90, 4, 1);
        assert!((cr - (1.0 - 4290.0 / 25600.0)).abs() < 1e-15);
        assert!((cr - 0.832422).abs() < 1e-6);

        let single = compression_ratio(768, 512, 1, 0, 5, 5);
        assert!((single - (1.0 - 5.0 * 1281.0 / 393216.0)).abs() < 1e-15);

        // 5x5 patches: break-even rank is 25/11, so rank 3 everywhere expands.
        assert!(compression_ratio(5, 5, 4, 0, 3, 3) <= 0.0);
    }

    #[test]
    fn fraction_examples() {
        let f = complex_fraction(&cfg(16, 4, 1, 0.85)).unwrap();
        assert!((f - (38.4 / 33.0 - 1.0) / 3.0).abs() < 1e-12);
        assert!((f - 0.0545455).abs() < 1e-7);
        assert_eq!((f * 1536.0).floor(), 83.0);

        // 16*16*(1-cr)/33 = 1 at cr = 1 - 33/256
        let f = complex_fraction(&cfg(16, 4, 1, 1.0 - 33.0 / 256.0)).unwrap();
        assert!(f.abs() < 1e-12);

        assert_eq!(
            complex_fraction(&cfg(16, 3, 3, 0.5)),
            Err(RateError::DegenerateAllocation)
        );
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&cfg(2, 1, 1, 0.5))
            .iter()
            .any(|v| matches!(v, Violation::PatchBelowLowerBound { .. })));
        assert!(validate(&cfg(3, 1, 1, 0.5)).is_empty());
        assert!((square_patch_lower_bound(1) - 2.414_213_562).abs() < 1e-9);
        assert!((square_patch_lower_bound(2) - 4.449_489_742).abs() < 1e-9);
        assert!(validate(&cfg(5, 2, 2, 0.5)).is_empty());
        assert!(validate(&cfg(4, 2, 2, 0.5))
            .iter()
            .any(|v| matches!(v, Violation::PatchBelowLowerBound { .. })));
        assert!(validate(&cfg(8, 0, 0, 0.5)).contains(&Violation::RankNotPositive { name: "k_s" }));
        assert!(validate(&cfg(8, 1, 2, 0.5))
            .contains(&Violation::ComplexBelowSimple { k_c: 1, k_s: 2 }));
        assert!(!validate(&cfg(8, 2, 1, 1.0)).is_empty());
        assert!(!validate(&cfg(8, 2, 1, f64::NAN)).is_empty());
    }

    #[test]
    fn lower_bound_message_quotes_the_bound() {
        let e = cfg(2, 1, 1, 0.5).validate().unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("2.4142"), "{msg}");
    }

    #[test]
    fn fallback_rank_examples() {
        assert_eq!(fallback_rank(0.9, 512, 768), 30);
        assert_eq!(fallback_rank(0.999_999, 512, 768), 1);
        assert_eq!(fallback_rank(0.0, 512, 768), 393216 / 1281);
        assert_eq!(fallback_rank(0.0, 3, 3), 1);
    }

    #[test]
    fn plan_examples() {
        let g = PatchGrid::new(512, 768, 16, 16).unwrap();
        let p = plan(&cfg(16, 4, 1, 0.85), &g).unwrap();
        assert_eq!((p.n_c, p.n_s, p.fallback), (83, 1453, false));
        assert!(p.achieved_cr >= 0.85);

        // 4 patches: fraction * t < 1
        let small = PatchGrid::new(32, 32, 16, 16).unwrap();
        let p = plan(&cfg(16, 4, 1, 0.85), &small).unwrap();
        assert!(p.fallback);
        assert_eq!(p.fallback_rank, fallback_rank(0.85, 32, 32));

        let p = plan(&cfg(16, 3, 3, 0.85), &g).unwrap();
        assert!(p.uniform && !p.fallback);
        assert_eq!(p.n_s, 1536);
    }

    #[test]
    fn plan_rejects_unreachable_targets() {
        let g = PatchGrid::new(5, 5, 5, 5).unwrap();
        assert!(matches!(
            plan(&cfg(5, 2, 1, 0.9), &g),
            Err(RateError::Infeasible { .. })
        ));
        assert!(matches!(
            plan(&cfg(2, 1, 1, 0.5), &g),
            Err(RateError::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn fraction_monotone(p in 3usize..24, k_s in 1usize..4, dk in 1usize..6, cr in 0.0f64..0.95, dcr in 0.001f64..0.04) {
            let base = cfg(p, k_s + dk, k_s, cr);
            prop_assume!(validate(&base).is_empty() && cr + dcr < 1.0);
            let f0 = complex_fraction(&base).unwrap();
            let f_cr = complex_fraction(&cfg(p, k_s + dk, k_s, cr + dcr)).unwrap();
            prop_assert!(f_cr < f0);
            let f_ks = complex_fraction(&cfg(p, k_s + dk + 1, k_s + 1, cr)).unwrap();
            // Raising k_s with k_c - k_s fixed.
            prop_assert!(f_ks < f0);
            // Raising k_s with k_c fixed, while the allocation is below 1.
            if f0 < 1.0 && dk > 1 {
                let f_ks_fixed = complex_fraction(&cfg(p, k_s + dk, k_s + 1, cr)).unwrap();
                prop_assert!(f_ks_fixed < f0);
            }
            let numerator = (p * p) as f64 * (1.0 - cr) / (2 * p + 1) as f64 - k_s as f64;
            if numerator > 0.0 {
                let f_kc = complex_fraction(&cfg(p, k_s + dk + 1, k_s, cr)).unwrap();
                prop_assert!(f_kc < f0);
            }
        }

        #[test]
        fn ratio_matches_storage_identity(px in 1usize..40, py in 1usize..40, n_c in 0usize..50, n_s in 0usize..50, k_c in 1usize..10, k_s in 1usize..10) {
            prop_assume!(n_c + n_s > 0);
            let stored = storage_patchsvd(px, py, n_c, n_s, k_c, k_s) as f64;
            let original = (px * py * (n_c + n_s)) as f64;
            prop_assert_eq!(compression_ratio(px, py, n_c, n_s, k_c, k_s), 1.0 - stored / original);
        }
    }
}
