//! Moments of the random mixing matrix and the closed-form bounds on them.
//!
//! For one block the round acts as `X_next = V W`. Averaged over owner choice
//! and drop events, `E[W]`, `E[W W^T]` and `E[W A W^T]` (with `A` the all-1/n
//! matrix) each take the form `alpha I + (1 - alpha) A`. This module computes
//! those moments exactly by enumeration or approximately by sampling the
//! protocol, fits the three constants, and evaluates the analytic upper bounds.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::protocol::{extract_mixing_matrix, sample_comm_outcome, DropModel, OwnerMode};

/// Largest worker count the exact enumeration accepts.
pub const MAX_EXACT_N: usize = 12;

/// Default Monte-Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Samples {
    Exact,
    Count(usize),
}

impl std::fmt::Display for Samples {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Samples::Exact => f.write_str("exact"),
            Samples::Count(c) => write!(f, "{c}"),
        }
    }
}

/// Averaged moments of `W` with their fitted structural constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub n: usize,
    pub p: f64,
    pub mean_w: DMatrix<f64>,
    pub mean_wwt: DMatrix<f64>,
    pub mean_wawt: DMatrix<f64>,
    pub samples: Samples,
    /// Constant of `E[W]`.
    pub alpha_ew: f64,
    /// Constant of `E[W W^T]`.
    pub alpha1: f64,
    /// Constant of `E[W A W^T]`.
    pub alpha2: f64,
    /// Frobenius residuals of the three fits, in the order above.
    pub residuals: [f64; 3],
    /// Standard errors of the three alphas (sampling only).
    pub std_errors: Option<[f64; 3]>,
}

impl MomentEstimate {
    pub fn beta(&self) -> f64 {
        self.alpha1 - self.alpha2
    }

    pub fn residual_max(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    fn from_moments(n: usize, p: f64, moments: [DMatrix<f64>; 3], samples: Samples) -> Result<Self> {
        let [mean_w, mean_wwt, mean_wawt] = moments;
        let (alpha_ew, r0) = fit_alpha(&mean_w)?;
        let (alpha1, r1) = fit_alpha(&mean_wwt)?;
        let (alpha2, r2) = fit_alpha(&mean_wawt)?;
        Ok(Self {
            n,
            p,
            mean_w,
            mean_wwt,
            mean_wawt,
            samples,
            alpha_ew,
            alpha1,
            alpha2,
            residuals: [r0, r1, r2],
            std_errors: None,
        })
    }
}

/// Reads `alpha` off the diagonal of `m`, assuming `m = alpha I + (1 - alpha) A`,
/// and reports how far `m` is from that form.
pub fn fit_alpha(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !m.is_square() {
        return Err(Error::Shape { expected: "square matrix".into(), actual: format!("{:?}", m.shape()) });
    }
    let n = m.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter("alpha fit needs n >= 2".into()));
    }
    let nf = n as f64;
    let alpha = (m.trace() - 1.0) / (nf - 1.0);
    let off = (1.0 - alpha) / nf;
    let mut sq = 0.0;
    for r in 0..n {
        for c in 0..n {
            let model = if r == c { alpha + off } else { off };
            let e = m[(r, c)] - model;
            sq += e * e;
        }
    }
    Ok((alpha, sq.sqrt()))
}

fn check_np(n: usize, p: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("drop rate {p} outside [0, 1]")));
    }
    Ok(())
}

/// Exact moments by enumerating every reduce-scatter and all-gather drop
/// pattern of one block whose owner is worker 0, then averaging over the
/// `n` owner positions.
pub fn exact_moments(n: usize, p: f64) -> Result<MomentEstimate> {
    check_np(n, p)?;
    if n > MAX_EXACT_N {
        return Err(Error::EnumerationTooLarge(n));
    }
    let others = n - 1;
    let patterns = 1usize << others;
    let q = 1.0 - p;
    let pattern_weight = |mask: usize| {
        let kept = mask.count_ones() as i32;
        q.powi(kept) * p.powi(others as i32 - kept)
    };
    // bit b of a mask refers to worker b + 1; the owner is always included.
    let member = |mask: usize, worker: usize| worker == 0 || mask & (1 << (worker - 1)) != 0;

    let mut ew = DMatrix::<f64>::zeros(n, n);
    let mut eww = DMatrix::<f64>::zeros(n, n);
    let mut ewaw = DMatrix::<f64>::zeros(n, n);
    let mut row_sums = vec![0.0; n];
    let nf = n as f64;

    for rs in 0..patterns {
        let w_rs = pattern_weight(rs);
        if w_rs == 0.0 {
            continue;
        }
        let in_r: Vec<bool> = (0..n).map(|m| member(rs, m)).collect();
        let r = in_r.iter().filter(|&&b| b).count() as f64;
        let u = 1.0 / r;
        for ag in 0..patterns {
            let w = w_rs * pattern_weight(ag);
            if w == 0.0 {
                continue;
            }
            let in_g: Vec<bool> = (0..n).map(|k| member(ag, k)).collect();
            let g = in_g.iter().filter(|&&b| b).count() as f64;

            // W: columns in G are uniform over R, the rest are unit vectors.
            for k in 0..n {
                if in_g[k] {
                    for m in 0..n {
                        if in_r[m] {
                            ew[(m, k)] += w * u;
                        }
                    }
                } else {
                    ew[(k, k)] += w;
                }
            }
            // W W^T = |G| u u^T + sum over k outside G of e_k e_k^T.
            for a in 0..n {
                if !in_r[a] {
                    continue;
                }
                for b in 0..n {
                    if in_r[b] {
                        eww[(a, b)] += w * g * u * u;
                    }
                }
            }
            for k in 0..n {
                if !in_g[k] {
                    eww[(k, k)] += w;
                }
            }
            // W A W^T = s s^T / n with s = W 1.
            for m in 0..n {
                row_sums[m] = if in_r[m] { g * u } else { 0.0 } + if in_g[m] { 0.0 } else { 1.0 };
            }
            for a in 0..n {
                let sa = row_sums[a];
                if sa == 0.0 {
                    continue;
                }
                for b in 0..n {
                    ewaw[(a, b)] += w * sa * row_sums[b] / nf;
                }
            }
        }
    }

    let moments = [symmetrize_owner(&ew), symmetrize_owner(&eww), symmetrize_owner(&ewaw)];
    MomentEstimate::from_moments(n, p, moments, Samples::Exact)
}

/// Averages `P_b M P_b^T` over the transpositions `(0 b)`, turning the
/// owner-0 expectation into the uniform-owner one.
fn symmetrize_owner(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    let swap = |i: usize, b: usize| {
        if i == 0 {
            b
        } else if i == b {
            0
        } else {
            i
        }
    };
    for b in 0..n {
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += m[(swap(i, b), swap(j, b))];
            }
        }
    }
    out / n as f64
}

#[derive(Clone)]
struct Partial {
    w: DMatrix<f64>,
    ww: DMatrix<f64>,
    waw: DMatrix<f64>,
    alpha_sum: [f64; 3],
    alpha_sq: [f64; 3],
}

impl Partial {
    fn zeros(n: usize) -> Self {
        Self {
            w: DMatrix::zeros(n, n),
            ww: DMatrix::zeros(n, n),
            waw: DMatrix::zeros(n, n),
            alpha_sum: [0.0; 3],
            alpha_sq: [0.0; 3],
        }
    }

    fn merge(mut self, other: &Partial) -> Self {
        self.w += &other.w;
        self.ww += &other.ww;
        self.waw += &other.waw;
        for k in 0..3 {
            self.alpha_sum[k] += other.alpha_sum[k];
            self.alpha_sq[k] += other.alpha_sq[k];
        }
        self
    }
}

const MC_CHUNK: usize = 4096;

/// Monte-Carlo moments from `samples` protocol rounds, looking at block 0.
/// Each sample uses its own iteration key, so chunks can run in parallel
/// without changing the result.
pub fn mc_moments(n: usize, p: f64, owner_mode: OwnerMode, samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_np(n, p)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let drop = DropModel::new(p, seed)?;
    let nf = n as f64;
    let chunks: Vec<(usize, usize)> =
        (0..samples).step_by(MC_CHUNK).map(|s| (s, (s + MC_CHUNK).min(samples))).collect();

    let partials: Vec<Partial> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = Partial::zeros(n);
            for k in lo..hi {
                let outcome = sample_comm_outcome(n, &drop, k as u64, owner_mode);
                let w = extract_mixing_matrix(&outcome, 0).into_matrix();
                let ww = &w * w.transpose();
                let s = w.column_sum();
                let waw = &s * s.transpose() / nf;
                let traces = [w.trace(), ww.trace(), waw.trace()];
                for (i, t) in traces.iter().enumerate() {
                    let a = (t - 1.0) / (nf - 1.0);
                    acc.alpha_sum[i] += a;
                    acc.alpha_sq[i] += a * a;
                }
                acc.w += w;
                acc.ww += ww;
                acc.waw += waw;
            }
            acc
        })
        .collect();
    let total = partials.iter().fold(Partial::zeros(n), |acc, p| acc.merge(p));

    let count = samples as f64;
    let moments = [total.w / count, total.ww / count, total.waw / count];
    let mut est = MomentEstimate::from_moments(n, p, moments, Samples::Count(samples))?;
    let mut se = [0.0; 3];
    for k in 0..3 {
        let mean = total.alpha_sum[k] / count;
        let var = if samples > 1 {
            ((total.alpha_sq[k] - count * mean * mean) / (count - 1.0)).max(0.0)
        } else {
            0.0
        };
        se[k] = (var / count).sqrt();
    }
    est.std_errors = Some(se);
    Ok(est)
}

fn check_bound_domain(n: usize, p: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    if p == 1.0 {
        return Err(Error::SingularAtPOne);
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("drop rate {p} outside [0, 1)")));
    }
    Ok(())
}

pub fn t1(n: usize, p: f64) -> Result<f64> {
    check_bound_domain(n, p)?;
    let nf = n as f64;
    let q = 1.0 - p;
    let num = 1.0
        - p.powi(n as i32 + 1)
        - (nf + 1.0) * q * p.powi(n as i32)
        - (nf + 1.0) * nf * q * q * p.powi(n as i32 - 1) / 2.0
        - q.powi(n as i32 + 1);
    Ok(2.0 * num / (nf * (nf + 1.0) * q * q))
}

pub fn t2(n: usize, p: f64) -> Result<f64> {
    check_bound_domain(n, p)?;
    let nf = n as f64;
    let q = 1.0 - p;
    let num = 1.0 - p.powi(n as i32) - nf * q * p.powi(n as i32 - 1) - q.powi(n as i32);
    Ok(num / ((nf - 1.0) * q))
}

pub fn t3(n: usize, p: f64) -> Result<f64> {
    check_bound_domain(n, p)?;
    let nf = n as f64;
    let q = 1.0 - p;
    let tail = q.powi(n as i32 - 1);
    Ok(nf / (nf - 1.0) * (1.0 - p.powi(n as i32 - 1) - tail) + tail)
}

/// Upper bound on the `E[W W^T]` constant.
pub fn alpha1_bound(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    let q = 1.0 - p;
    Ok((nf * p + q.powi(n as i32) + nf * t1(n, p)? + nf * t2(n, p)? - 1.0) / (nf - 1.0))
}

/// Upper bound on the `E[W A W^T]` constant.
pub fn alpha2_bound(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    let q = 1.0 - p;
    Ok((p * (1.0 + 2.0 * t3(n, p)?) + q.powi(n as i32 - 1)) / nf
        + 2.0 * p * q.powi(n as i32) / nf
        + p.powi(n as i32) * q / (nf * nf)
        + t1(n, p)?
        + t2(n, p)?)
}

/// All closed-form quantities for one `(n, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBounds {
    pub n: usize,
    pub p: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub alpha1_upper: f64,
    pub alpha2_upper: f64,
    /// `beta = alpha1 - alpha2 <= alpha1`, so the alpha1 bound carries over.
    pub beta_upper: f64,
}

pub fn alpha_bounds(n: usize, p: f64) -> Result<AlphaBounds> {
    let alpha1_upper = alpha1_bound(n, p)?;
    Ok(AlphaBounds {
        n,
        p,
        t1: t1(n, p)?,
        t2: t2(n, p)?,
        t3: t3(n, p)?,
        alpha1_upper,
        alpha2_upper: alpha2_bound(n, p)?,
        beta_upper: alpha1_upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64, owner_mode: OwnerMode },
}

impl SweepMode {
    pub fn label(&self) -> &'static str {
        match self {
            SweepMode::Exact => "exact",
            SweepMode::MonteCarlo { .. } => "mc",
        }
    }
}

/// One `(n, p)` cell of an alpha sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub mode: &'static str,
    pub samples: Samples,
    pub alpha_ew: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub alpha1_bound: f64,
    pub alpha2_bound: f64,
    pub residual_max: f64,
}

/// Evaluates every `(n, p)` pair, `n` varying slowest. Cells run in parallel;
/// row order follows the input lists.
pub fn sweep_alphas(n_list: &[usize], p_list: &[f64], mode: SweepMode) -> Result<Vec<SweepRow>> {
    if n_list.is_empty() || p_list.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }
    let cells: Vec<(usize, f64)> = n_list.iter().flat_map(|&n| p_list.iter().map(move |&p| (n, p))).collect();
    cells
        .par_iter()
        .map(|&(n, p)| {
            let bounds = alpha_bounds(n, p)?;
            let est = match mode {
                SweepMode::Exact => exact_moments(n, p)?,
                SweepMode::MonteCarlo { samples, seed, owner_mode } => mc_moments(n, p, owner_mode, samples, seed)?,
            };
            Ok(SweepRow {
                n,
                p,
                mode: mode.label(),
                samples: est.samples,
                alpha_ew: est.alpha_ew,
                alpha1: est.alpha1,
                alpha2: est.alpha2,
                beta: est.beta(),
                alpha1_bound: bounds.alpha1_upper,
                alpha2_bound: bounds.alpha2_upper,
                residual_max: est.residual_max(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CommOutcome;

    fn uniform(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, n, 1.0 / n as f64)
    }

    /// Brute-force oracle: every owner, every drop pattern, explicit `W` from
    /// the protocol's extraction, dense products.
    fn brute_force(n: usize, p: f64) -> [DMatrix<f64>; 3] {
        let a = uniform(n);
        let mut acc = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for owner in 0..n {
            let mut owners: Vec<usize> = (0..n).collect();
            owners.swap(0, owner);
            for rs in 0..(1usize << n) {
                for ag in 0..(1usize << n) {
                    if rs & (1 << owner) == 0 || ag & (1 << owner) == 0 {
                        continue;
                    }
                    let lost = (n - rs.count_ones() as usize) + (n - ag.count_ones() as usize);
                    let kept = 2 * (n - 1) - lost;
                    let weight = p.powi(lost as i32) * (1.0 - p).powi(kept as i32) / n as f64;
                    let mask = |m: usize| (0..n).map(|i| m & (1 << i) != 0).collect::<Vec<bool>>();
                    let mut rs_masks = vec![vec![true; n]; n];
                    let mut ag_masks = vec![vec![true; n]; n];
                    rs_masks[0] = mask(rs);
                    ag_masks[0] = mask(ag);
                    let outcome = CommOutcome::new(owners.clone(), rs_masks, ag_masks).unwrap();
                    let w = extract_mixing_matrix(&outcome, 0).into_matrix();
                    acc[1] += (&w * w.transpose()) * weight;
                    acc[2] += (&w * &a * w.transpose()) * weight;
                    acc[0] += w * weight;
                }
            }
        }
        acc
    }

    #[test]
    fn fit_alpha_examples() {
        assert_eq!(fit_alpha(&uniform(5)).unwrap().0, 0.0);
        assert!(fit_alpha(&uniform(5)).unwrap().1 < 1e-15);
        assert_eq!(fit_alpha(&DMatrix::identity(4, 4)).unwrap(), (1.0, 0.0));
        let half = DMatrix::identity(2, 2) * 0.5 + uniform(2) * 0.5;
        let (a, r) = fit_alpha(&half).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && r < 1e-15);
        assert!(fit_alpha(&DMatrix::identity(1, 1)).is_err());
        assert!(fit_alpha(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn exact_matches_brute_force() {
        for n in 2..=5 {
            for &p in &[0.0, 0.1, 0.37, 0.8, 1.0] {
                let est = exact_moments(n, p).unwrap();
                let oracle = brute_force(n, p);
                let got = [&est.mean_w, &est.mean_wwt, &est.mean_wawt];
                for k in 0..3 {
                    let err = (got[k] - &oracle[k]).amax();
                    assert!(err < 1e-13, "n={n} p={p} moment {k}: {err}");
                }
            }
        }
    }

    #[test]
    fn two_workers_half_drop_by_hand() {
        // Owner 0: the four (rs, ag) patterns of worker 1 give
        //   W = A, [[.5,0],[.5,1]], [[1,1],[0,0]], I  each with weight 1/4.
        // E[W | owner 0] = [[.75,.375],[.25,.625]]; averaging over both owners
        // gives diagonal .6875 and off-diagonal .3125.
        let est = exact_moments(2, 0.5).unwrap();
        let w = &est.mean_w;
        assert!((w[(0, 0)] - 0.6875).abs() < 1e-15);
        assert!((w[(1, 1)] - 0.6875).abs() < 1e-15);
        assert!((w[(0, 1)] - 0.3125).abs() < 1e-15);
        assert!((w[(1, 0)] - 0.3125).abs() < 1e-15);
        assert!((est.alpha_ew - 0.375).abs() < 1e-15);
        // tr E[W W^T] = (1 + 1.5 + 2 + 2) / 4 = 1.625, alpha1 = 0.625.
        assert!((est.alpha1 - 0.625).abs() < 1e-15);
    }

    #[test]
    fn exact_limits() {
        for n in 2..=6 {
            let none = exact_moments(n, 0.0).unwrap();
            for m in [&none.mean_w, &none.mean_wwt, &none.mean_wawt] {
                assert!((m - uniform(n)).amax() < 1e-15);
            }
            assert!(none.alpha_ew.abs() < 1e-15 && none.alpha1.abs() < 1e-15 && none.alpha2.abs() < 1e-15);
            let all = exact_moments(n, 1.0).unwrap();
            assert!((&all.mean_w - DMatrix::identity(n, n)).amax() < 1e-15);
            assert!((all.alpha1 - 1.0).abs() < 1e-15 && (all.alpha_ew - 1.0).abs() < 1e-15);
            // W = I leaves W A W^T = A.
            assert!(all.alpha2.abs() < 1e-15);
        }
    }

    #[test]
    fn exact_cell_hand_weights() {
        // n=4, p=0.1, owner-0 conditional diagonal entry E[W_00 | owner 0]:
        // column 0 is always uniform over R, so W_00 = 1/|R| with
        // |R| - 1 ~ Binomial(3, 0.9).
        let p: f64 = 0.1;
        let q = 1.0 - p;
        let cond_w00 = p.powi(3) + 3.0 * q * p * p / 2.0 + 3.0 * q * q * p / 3.0 + q.powi(3) / 4.0;
        // For owner b != 0, W_00 = 1/|R| when worker 0 both sent and received,
        // 1 when it received nothing, 0 when it missed RS but got the average.
        let mut cond_other = p; // worker 0 misses the AG message: keeps its block.
        // got AG (prob q), its RS survived (prob q), plus k of 2 others.
        for k in 0..=2 {
            let binom = [1.0, 2.0, 1.0][k];
            cond_other += q * q * binom * q.powi(k as i32) * p.powi(2 - k as i32) / (k as f64 + 2.0);
        }
        let diag = (cond_w00 + 3.0 * cond_other) / 4.0;
        let est = exact_moments(4, p).unwrap();
        assert!((est.mean_w[(0, 0)] - diag).abs() < 1e-14, "{} vs {diag}", est.mean_w[(0, 0)]);
    }

    #[test]
    fn exact_rejects_large_and_small() {
        assert_eq!(exact_moments(13, 0.1).unwrap_err(), Error::EnumerationTooLarge(13));
        assert!(exact_moments(1, 0.1).is_err());
        assert!(exact_moments(3, 1.5).is_err());
    }

    #[test]
    fn mc_limits() {
        let none = mc_moments(4, 0.0, OwnerMode::RandomPermutation, 50, 1).unwrap();
        assert!((&none.mean_w - uniform(4)).amax() < 1e-15);
        assert!(none.alpha2.abs() < 1e-15 && none.residual_max() < 1e-14);
        let all = mc_moments(4, 1.0, OwnerMode::RandomPermutation, 50, 1).unwrap();
        assert!((&all.mean_w - DMatrix::identity(4, 4)).amax() < 1e-15);
        assert!((all.alpha1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mc_is_deterministic_and_owner_mode_invariant() {
        let a = mc_moments(5, 0.3, OwnerMode::RandomPermutation, 20_000, 9).unwrap();
        let b = mc_moments(5, 0.3, OwnerMode::RandomPermutation, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let exact = exact_moments(5, 0.3).unwrap();
        let fixed = mc_moments(5, 0.3, OwnerMode::FixedIdentity, 20_000, 9).unwrap();
        for est in [&a, &fixed] {
            let se = est.std_errors.unwrap();
            assert!((est.alpha1 - exact.alpha1).abs() < 4.0 * se[1]);
            assert!((est.alpha2 - exact.alpha2).abs() < 4.0 * se[2]);
        }
    }

    #[test]
    fn mc_error_shrinks_with_samples() {
        let exact = exact_moments(4, 0.3).unwrap();
        let mut errs = Vec::new();
        for &s in &[1_000usize, 16_000, 256_000] {
            let est = mc_moments(4, 0.3, OwnerMode::RandomPermutation, s, 21).unwrap();
            let se = est.std_errors.unwrap()[1];
            assert!((est.alpha1 - exact.alpha1).abs() < 4.0 * se);
            errs.push(se);
        }
        // 16x more samples: standard error drops by ~4x.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.3).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn t_terms_at_zero_drop() {
        for n in 2..10 {
            assert_eq!(t1(n, 0.0).unwrap(), 0.0);
            assert_eq!(t2(n, 0.0).unwrap(), 0.0);
            assert_eq!(t3(n, 0.0).unwrap(), 1.0);
            assert_eq!(alpha1_bound(n, 0.0).unwrap(), 0.0);
            assert_eq!(alpha2_bound(n, 0.0).unwrap(), 1.0 / n as f64);
        }
    }

    /// Binomial-sum forms of T1 and T2 (the sums the closed forms collapse).
    fn t1_sum(n: usize, p: f64) -> f64 {
        let q = 1.0 - p;
        let mut s = 0.0;
        for m in 3..=n {
            s += binom(n + 1, m) * q.powi(m as i32) * p.powi((n + 1 - m) as i32);
        }
        2.0 * s / (n as f64 * (n as f64 + 1.0) * q * q)
    }

    fn t2_sum(n: usize, p: f64) -> f64 {
        let q = 1.0 - p;
        let mut s = 0.0;
        for m in 2..n {
            s += binom(n, m) * q.powi(m as i32) * p.powi((n - m) as i32);
        }
        s / ((n as f64 - 1.0) * q)
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn t_terms_match_binomial_sums() {
        for n in 2..12 {
            for &p in &[0.01, 0.1, 0.5, 0.9] {
                assert!((t1(n, p).unwrap() - t1_sum(n, p)).abs() < 1e-12, "t1 n={n} p={p}");
                assert!((t2(n, p).unwrap() - t2_sum(n, p)).abs() < 1e-12, "t2 n={n} p={p}");
            }
        }
    }

    #[test]
    fn t_terms_reference_values() {
        // 40-digit evaluations of the closed forms.
        assert!((t2(4, 0.5).unwrap() - 5.0 / 12.0).abs() < 1e-15);
        assert!((t1(4, 0.5).unwrap() - 0.1875).abs() < 1e-15);
        assert!((t3(4, 0.5).unwrap() - 1.125).abs() < 1e-15);
        assert!((alpha2_bound(8, 0.1).unwrap() - 0.2213213546763392857).abs() < 1e-14);
        assert!((alpha1_bound(8, 0.1).unwrap() - 0.1602488463265306122).abs() < 1e-14);
    }

    #[test]
    fn bounds_singular_at_one() {
        assert_eq!(t1(4, 1.0), Err(Error::SingularAtPOne));
        assert_eq!(t2(4, 1.0), Err(Error::SingularAtPOne));
        assert_eq!(alpha2_bound(4, 1.0), Err(Error::SingularAtPOne));
        assert!(alpha_bounds(4, 1.0).unwrap_err().to_string().contains("singular at p=1"));
    }

    #[test]
    fn bounds_nonnegative_terms() {
        for n in 2..16 {
            for k in 0..100 {
                let p = k as f64 / 100.0;
                let b = alpha_bounds(n, p).unwrap();
                assert!(b.t1 >= -1e-12 && b.t2 >= -1e-12 && b.t3 >= -1e-12, "n={n} p={p} {b:?}");
            }
        }
    }

    #[test]
    fn sweep_single_zero_cell() {
        let rows = sweep_alphas(&[4], &[0.0], SweepMode::Exact).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.alpha_ew.abs() < 1e-15 && r.alpha1.abs() < 1e-15 && r.alpha2.abs() < 1e-15);
    }

    #[test]
    fn sweep_alpha2_decreases_in_n() {
        let rows = sweep_alphas(&[4, 8, 12], &[0.1], SweepMode::Exact).unwrap();
        assert!(rows[0].alpha2 > rows[1].alpha2 && rows[1].alpha2 > rows[2].alpha2);
        for r in &rows {
            assert!(r.n as f64 * r.alpha2 / (0.1 * 0.9) < 4.0);
        }
    }

    #[test]
    fn sweep_propagates_singularity() {
        assert_eq!(sweep_alphas(&[4], &[1.0], SweepMode::Exact), Err(Error::SingularAtPOne));
    }
}
