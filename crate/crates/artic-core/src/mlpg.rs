//! Maximum-likelihood parameter generation.
//!
//! Recovers the static trajectory that maximizes a diagonal Gaussian
//! likelihood over stacked static, delta and delta-delta streams. The normal
//! equations `(W' S^-1 W) c = W' S^-1 mu` are assembled directly from the
//! clamped window coefficients and solved with a symmetric banded Cholesky
//! factorization.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::features::TrajectorySet;
use crate::mdn::MdnParams;

/// Differential windows used both for target augmentation and generation.
/// The static window is always the unit impulse; boundaries replicate the
/// edge frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaWindows {
    static_win: Vec<f64>,
    delta: Vec<f64>,
    delta_delta: Vec<f64>,
}

impl Default for DeltaWindows {
    fn default() -> Self {
        DeltaWindows {
            static_win: vec![1.0],
            delta: vec![-0.5, 0.0, 0.5],
            delta_delta: vec![1.0, -2.0, 1.0],
        }
    }
}

impl DeltaWindows {
    pub fn new(delta: Vec<f64>, delta_delta: Vec<f64>) -> Result<Self> {
        if delta.len() % 2 == 0 || delta_delta.len() % 2 == 0 || delta.is_empty() || delta_delta.is_empty() {
            return Err(Error::Config("delta windows must have odd length".into()));
        }
        Ok(DeltaWindows {
            static_win: vec![1.0],
            delta,
            delta_delta,
        })
    }

    pub fn statics(&self) -> &[f64] {
        &self.static_win
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn delta_delta(&self) -> &[f64] {
        &self.delta_delta
    }

    /// Streams in observation order: static, delta, delta-delta.
    pub fn streams(&self) -> [&[f64]; 3] {
        [&self.static_win, &self.delta, &self.delta_delta]
    }

    /// Half-bandwidth of the normal-equation matrix: twice the largest
    /// window half-length (2 for the default windows).
    pub fn half_bandwidth(&self) -> usize {
        let h = self
            .streams()
            .iter()
            .map(|w| w.len() / 2)
            .max()
            .unwrap_or(0);
        2 * h
    }
}

/// One dimension's Gaussian sequence: columns are the static, delta and
/// delta-delta streams over T frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpgProblem {
    means: Array2<f64>,
    variances: Array2<f64>,
}

impl MlpgProblem {
    pub fn new(means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        if means.dim() != variances.dim() {
            return Err(Error::Data(format!(
                "means {:?} and variances {:?} disagree",
                means.dim(),
                variances.dim()
            )));
        }
        let (t, streams) = means.dim();
        if t == 0 || streams != 3 {
            return Err(Error::Data(format!(
                "mlpg problem must be Tx3 with T >= 1, got {t}x{streams}"
            )));
        }
        if means.iter().any(|v| !v.is_finite()) || variances.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("mlpg problem contains non-finite values".into()));
        }
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("mlpg variances must be positive".into()));
        }
        Ok(MlpgProblem { means, variances })
    }

    pub fn frames(&self) -> usize {
        self.means.nrows()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }
}

/// Solved static sequence for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Array1<f64>,
}

/// Which variances drive the MLPG weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Per-frame predicted variances as produced by the density model.
    #[default]
    PerFrame,
    /// Each stream's variance replaced by its average over the utterance.
    Pooled,
}

/// Window coefficients of one observation row after replicate-edge clamping,
/// as (static-frame column, accumulated coefficient) pairs.
fn clamped_row(t: usize, n: usize, window: &[f64]) -> Vec<(usize, f64)> {
    let half = window.len() as isize / 2;
    let mut cols: Vec<(usize, f64)> = Vec::with_capacity(window.len());
    for (i, &c) in window.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let src = (t as isize + i as isize - half).clamp(0, n as isize - 1) as usize;
        match cols.iter_mut().find(|(col, _)| *col == src) {
            Some((_, acc)) => *acc += c,
            None => cols.push((src, c)),
        }
    }
    cols.retain(|(_, c)| *c != 0.0);
    cols
}

/// Dense 3T x T window matrix; rows 3t..3t+2 hold the static, delta and
/// delta-delta rows of frame t.
pub fn build_window_matrix(t: usize, win: &DeltaWindows) -> Array2<f64> {
    let mut w = Array2::zeros((3 * t, t));
    for frame in 0..t {
        for (s, coeffs) in win.streams().iter().enumerate() {
            for (col, c) in clamped_row(frame, t, coeffs) {
                w[[3 * frame + s, col]] += c;
            }
        }
    }
    w
}

/// Symmetric banded matrix in lower storage: `band[[i, d]]` holds A[i, i-d]
/// for d = 0..=hb.
struct BandedSpd {
    band: Array2<f64>,
    hb: usize,
}

impl BandedSpd {
    fn zeros(n: usize, hb: usize) -> Self {
        BandedSpd {
            band: Array2::zeros((n, hb + 1)),
            hb,
        }
    }

    fn n(&self) -> usize {
        self.band.nrows()
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.hb);
        self.band[[hi, hi - lo]] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.hb {
            0.0
        } else {
            self.band[[hi, hi - lo]]
        }
    }

    fn matvec(&self, x: &Array1<f64>) -> Array1<f64> {
        let n = self.n();
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let lo = i.saturating_sub(self.hb);
            let hi = (i + self.hb).min(n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// In-place lower Cholesky; fails on a non-positive pivot.
    fn cholesky(mut self) -> Result<BandedChol> {
        let n = self.n();
        let hb = self.hb;
        for j in 0..n {
            let lo = j.saturating_sub(hb);
            let mut diag = self.band[[j, 0]];
            for k in lo..j {
                let l = self.band[[j, j - k]];
                diag -= l * l;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Numeric(format!(
                    "banded Cholesky pivot {diag:e} at row {j}; system not positive definite"
                )));
            }
            let d = diag.sqrt();
            self.band[[j, 0]] = d;
            let hi = (j + hb).min(n - 1);
            for i in j + 1..=hi {
                let mut s = self.band[[i, i - j]];
                let klo = i.saturating_sub(hb).max(lo);
                for k in klo..j {
                    s -= self.band[[i, i - k]] * self.band[[j, j - k]];
                }
                self.band[[i, i - j]] = s / d;
            }
        }
        Ok(BandedChol {
            band: self.band,
            hb,
        })
    }
}

struct BandedChol {
    band: Array2<f64>,
    hb: usize,
}

impl BandedChol {
    fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.band.nrows();
        let hb = self.hb;
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let lo = i.saturating_sub(hb);
            let mut s = b[i];
            for k in lo..i {
                s -= self.band[[i, i - k]] * y[k];
            }
            y[i] = s / self.band[[i, 0]];
        }
        let mut x = Array1::zeros(n);
        for i in (0..n).rev() {
            let hi = (i + hb).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=hi {
                s -= self.band[[j, j - i]] * x[j];
            }
            x[i] = s / self.band[[i, 0]];
        }
        x
    }
}

/// Maximum-likelihood static trajectory under the stacked stream Gaussians.
///
/// Solves `(W' S^-1 W) c = W' S^-1 mu` where S is the diagonal of stream
/// variances, using a banded Cholesky factorization. The residual of the
/// normal equations is verified before returning.
pub fn mlpg_solve(prob: &MlpgProblem, win: &DeltaWindows) -> Result<Trajectory> {
    let t = prob.frames();
    let hb = win.half_bandwidth().min(t - 1);
    let mut a = BandedSpd::zeros(t, hb);
    let mut rhs: Array1<f64> = Array1::zeros(t);

    for frame in 0..t {
        for (s, coeffs) in win.streams().iter().enumerate() {
            let inv_var = 1.0 / prob.variances[[frame, s]];
            let mu = prob.means[[frame, s]];
            let cols = clamped_row(frame, t, coeffs);
            // Both halves of a symmetric pair map to the same banded cell,
            // so only lower-triangle pairs are accumulated.
            for &(ci, wi) in &cols {
                rhs[ci] += wi * inv_var * mu;
                for &(cj, wj) in &cols {
                    if ci >= cj {
                        a.add(ci, cj, wi * inv_var * wj);
                    }
                }
            }
        }
    }

    let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = a.cholesky()?;
    let c = chol.solve(&rhs);

    // Rebuild A for the residual check; cholesky consumed the first copy.
    let mut a2 = BandedSpd::zeros(t, hb);
    for frame in 0..t {
        for (s, coeffs) in win.streams().iter().enumerate() {
            let inv_var = 1.0 / prob.variances[[frame, s]];
            let cols = clamped_row(frame, t, coeffs);
            for &(ci, wi) in &cols {
                for &(cj, wj) in &cols {
                    if ci >= cj {
                        a2.add(ci, cj, wi * inv_var * wj);
                    }
                }
            }
        }
    }
    let residual = &a2.matvec(&c) - &rhs;
    let res_norm = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if res_norm > 1e-8 * (1.0 + rhs_norm) {
        return Err(Error::Numeric(format!(
            "mlpg residual {res_norm:e} exceeds tolerance for rhs norm {rhs_norm:e}"
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("mlpg produced non-finite trajectory".into()));
    }
    Ok(Trajectory { values: c })
}

/// Smooth a 54-dimensional MDN output sequence into an 18-dimensional static
/// trajectory set.
///
/// Per frame the maximum-weight component is selected (ties break to the
/// lowest index); each static dimension is then solved independently from
/// its (static, delta, delta-delta) triplet. `Pooled` replaces each stream
/// variance by its utterance average before solving.
pub fn smooth_mdn_sequence(
    p: &MdnParams,
    win: &DeltaWindows,
    mode: VarianceMode,
) -> Result<TrajectorySet> {
    const STATIC_DIM: usize = 18;
    let d_total = p.target_dim();
    if d_total != 3 * STATIC_DIM {
        return Err(Error::Config(format!(
            "smoothing expects a {}-dimensional MDN target, got {d_total}",
            3 * STATIC_DIM
        )));
    }
    let t = p.frames();
    let picked: Vec<usize> = (0..t).map(|ti| p.max_weight_component(ti)).collect();

    let mut out = Array2::zeros((t, STATIC_DIM));
    for d in 0..STATIC_DIM {
        let mut means = Array2::zeros((t, 3));
        let mut vars = Array2::zeros((t, 3));
        for ti in 0..t {
            let m = picked[ti];
            for s in 0..3 {
                means[[ti, s]] = p.means()[[ti, m, s * STATIC_DIM + d]];
                vars[[ti, s]] = p.variances()[[ti, m, s * STATIC_DIM + d]];
            }
        }
        if mode == VarianceMode::Pooled {
            for s in 0..3 {
                let avg = vars.column(s).sum() / t as f64;
                vars.column_mut(s).fill(avg);
            }
        }
        let traj = mlpg_solve(&MlpgProblem::new(means, vars)?, win)?;
        for ti in 0..t {
            out[[ti, d]] = traj.values[ti];
        }
    }
    TrajectorySet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdn::{mdn_split, MdnConfig};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_matrix_single_frame() {
        let w = build_window_matrix(1, &DeltaWindows::default());
        assert_eq!(w, array![[1.0], [0.0], [0.0]]);
    }

    #[test]
    fn window_matrix_interior_delta_row() {
        let w = build_window_matrix(3, &DeltaWindows::default());
        // Frame index 1 (t=2 in one-based terms), delta row.
        assert_eq!(w.row(4).to_vec(), vec![-0.5, 0.0, 0.5]);
        // Delta-delta row of the same frame.
        assert_eq!(w.row(5).to_vec(), vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn window_matrix_on_ramp() {
        let w = build_window_matrix(3, &DeltaWindows::default());
        let ramp = array![1.0, 2.0, 3.0];
        let obs = w.dot(&ramp);
        // Interior frame: static 2, delta 1, delta-delta 0.
        assert!((obs[3] - 2.0).abs() < 1e-12);
        assert!((obs[4] - 1.0).abs() < 1e-12);
        assert!(obs[5].abs() < 1e-12);
    }

    fn uniform_problem(t: usize, statics: f64, var: f64) -> MlpgProblem {
        let mut means = Array2::zeros((t, 3));
        means.column_mut(0).fill(statics);
        MlpgProblem::new(means, Array2::from_elem((t, 3), var)).unwrap()
    }

    #[test]
    fn static_only_limit_recovers_static_means() {
        let t = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut means = Array2::zeros((t, 3));
        for v in means.column_mut(0).iter_mut() {
            *v = rng.random::<f64>() * 8.0 - 4.0;
        }
        let mut vars = Array2::from_elem((t, 3), 1e12);
        vars.column_mut(0).fill(1.0);
        let prob = MlpgProblem::new(means.clone(), vars).unwrap();
        let c = mlpg_solve(&prob, &DeltaWindows::default()).unwrap();
        for ti in 0..t {
            assert!((c.values[ti] - means[[ti, 0]]).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_sequence_is_a_fixed_point() {
        let prob = uniform_problem(7, 5.0, 1.0);
        let c = mlpg_solve(&prob, &DeltaWindows::default()).unwrap();
        for &v in c.values.iter() {
            assert!((v - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_frame_solve() {
        let prob = uniform_problem(1, 3.25, 1.0);
        let c = mlpg_solve(&prob, &DeltaWindows::default()).unwrap();
        assert_eq!(c.values.len(), 1);
        assert!((c.values[0] - 3.25).abs() < 1e-10);
    }

    /// Dense Gaussian elimination with partial pivoting, as an independent
    /// linear-algebra oracle.
    fn dense_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for k in 0..n {
                    let tmp = a[[col, k]];
                    a[[col, k]] = a[[pivot, k]];
                    a[[pivot, k]] = tmp;
                }
                b.swap(col, pivot);
            }
            for row in col + 1..n {
                let f = a[[row, col]] / a[[col, col]];
                for k in col..n {
                    a[[row, k]] -= f * a[[col, k]];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = Array1::zeros(n);
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[[row, k]] * x[k];
            }
            x[row] = s / a[[row, row]];
        }
        x
    }

    fn random_problem(rng: &mut ChaCha8Rng, t: usize) -> MlpgProblem {
        let means = Array2::from_shape_fn((t, 3), |_| rng.random::<f64>() * 6.0 - 3.0);
        let vars = Array2::from_shape_fn((t, 3), |_| 0.05 + rng.random::<f64>() * 2.0);
        MlpgProblem::new(means, vars).unwrap()
    }

    /// Dense oracle: build W explicitly, form the normal equations with
    /// ordinary matrix products and solve by Gaussian elimination.
    fn dense_mlpg(prob: &MlpgProblem, win: &DeltaWindows) -> Array1<f64> {
        let t = prob.frames();
        let w = build_window_matrix(t, win);
        let mut sinv = Array2::zeros((3 * t, 3 * t));
        let mut mu = Array1::zeros(3 * t);
        for ti in 0..t {
            for s in 0..3 {
                sinv[[3 * ti + s, 3 * ti + s]] = 1.0 / prob.variances()[[ti, s]];
                mu[3 * ti + s] = prob.means()[[ti, s]];
            }
        }
        let a = w.t().dot(&sinv).dot(&w);
        let rhs = w.t().dot(&sinv).dot(&mu);
        dense_solve(a, rhs)
    }

    #[test]
    fn banded_matches_dense_oracle_on_seeded_instances() {
        let win = DeltaWindows::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..100 {
            let t = 1 + (case % 8);
            let prob = random_problem(&mut rng, t);
            let banded = mlpg_solve(&prob, &win).unwrap();
            let dense = dense_mlpg(&prob, &win);
            for ti in 0..t {
                assert!(
                    (banded.values[ti] - dense[ti]).abs() < 1e-8,
                    "case {case} frame {ti}: {} vs {}",
                    banded.values[ti],
                    dense[ti]
                );
            }
        }
    }

    #[test]
    fn coordinate_perturbation_never_improves_objective() {
        let win = DeltaWindows::default();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let objective = |prob: &MlpgProblem, c: &Array1<f64>| {
            let w = build_window_matrix(prob.frames(), &win);
            let obs = w.dot(c);
            let mut q = 0.0;
            for ti in 0..prob.frames() {
                for s in 0..3 {
                    let r = obs[3 * ti + s] - prob.means()[[ti, s]];
                    q += r * r / prob.variances()[[ti, s]];
                }
            }
            q
        };
        for case in 0..20 {
            let t = 2 + (case % 7);
            let prob = random_problem(&mut rng, t);
            let c = mlpg_solve(&prob, &win).unwrap();
            let base = objective(&prob, &c.values);
            for ti in 0..t {
                for delta in [1e-3, -1e-3] {
                    let mut perturbed = c.values.clone();
                    perturbed[ti] += delta;
                    assert!(
                        objective(&prob, &perturbed) >= base - 1e-12,
                        "case {case}: perturbing frame {ti} improved the objective"
                    );
                }
            }
        }
    }

    #[test]
    fn variance_scale_invariance() {
        let win = DeltaWindows::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prob = random_problem(&mut rng, 6);
        let scaled = MlpgProblem::new(prob.means().clone(), prob.variances().mapv(|v| v * 3.7)).unwrap();
        let a = mlpg_solve(&prob, &win).unwrap();
        let b = mlpg_solve(&scaled, &win).unwrap();
        for ti in 0..6 {
            assert!((a.values[ti] - b.values[ti]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_variances() {
        let means = Array2::zeros((3, 3));
        let mut vars = Array2::from_elem((3, 3), 1.0);
        vars[[1, 1]] = 0.0;
        assert!(matches!(
            MlpgProblem::new(means, vars),
            Err(Error::Numeric(_))
        ));
    }

    /// MdnParams with one component whose means/variances are given for the
    /// full 54-dim layout.
    fn single_component_params(means: &Array2<f64>, vars: &Array2<f64>) -> MdnParams {
        let (t, d) = means.dim();
        let cfg = MdnConfig::new(1, d).unwrap();
        let mut raw = Array2::zeros((t, cfg.raw_width()));
        for ti in 0..t {
            raw[[ti, 0]] = 0.0;
            for di in 0..d {
                raw[[ti, 1 + di]] = means[[ti, di]];
                raw[[ti, 1 + d + di]] = 0.5 * vars[[ti, di]].ln();
            }
        }
        mdn_split(&raw, &cfg).unwrap()
    }

    #[test]
    fn smoothing_static_only_limit_returns_static_means() {
        let t = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut means = Array2::zeros((t, 54));
        for v in means.slice_mut(ndarray::s![.., 0..18]).iter_mut() {
            *v = rng.random::<f64>() * 10.0 - 5.0;
        }
        let mut vars = Array2::from_elem((t, 54), 1e12);
        vars.slice_mut(ndarray::s![.., 0..18]).fill(1.0);
        let p = single_component_params(&means, &vars);
        let out = smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::PerFrame).unwrap();
        for ti in 0..t {
            for d in 0..18 {
                assert!((out.data()[[ti, d]] - means[[ti, d]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn smoothing_reduces_roughness_of_noisy_statics() {
        let t = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut means = Array2::zeros((t, 54));
        for ti in 0..t {
            for d in 0..18 {
                let smooth = (ti as f64 * 0.3 + d as f64).sin() * 3.0;
                means[[ti, d]] = smooth + rng.random::<f64>() - 0.5;
                // Tight delta constraints pull the solution toward zero
                // frame-to-frame movement.
                means[[ti, 18 + d]] = 0.0;
                means[[ti, 36 + d]] = 0.0;
            }
        }
        let mut vars = Array2::from_elem((t, 54), 1.0);
        vars.slice_mut(ndarray::s![.., 18..54]).fill(0.05);
        let p = single_component_params(&means, &vars);
        let out = smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::PerFrame).unwrap();
        let roughness = |m: &Array2<f64>| {
            let mut r = 0.0;
            for ti in 1..t {
                for d in 0..18 {
                    r += (m[[ti, d]] - m[[ti - 1, d]]).powi(2);
                }
            }
            r
        };
        let raw = means.slice(ndarray::s![.., 0..18]).to_owned();
        assert!(roughness(out.data()) < roughness(&raw));
    }

    #[test]
    fn smoothing_single_frame_returns_max_component_static_mean() {
        let cfg = MdnConfig::new(2, 54).unwrap();
        let mut raw = Array2::zeros((1, cfg.raw_width()));
        raw[[0, 0]] = 2.0; // component 0 wins
        raw[[0, 1]] = -1.0;
        for d in 0..54 {
            raw[[0, 2 + d]] = d as f64; // component 0 means
            raw[[0, 2 + 54 + d]] = 100.0 + d as f64; // component 1 means
        }
        let p = mdn_split(&raw, &cfg).unwrap();
        let out = smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::PerFrame).unwrap();
        for d in 0..18 {
            assert!((out.data()[[0, d]] - d as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_tie_breaks_to_lowest_component() {
        let cfg = MdnConfig::new(2, 54).unwrap();
        let mut raw = Array2::zeros((2, cfg.raw_width()));
        for ti in 0..2 {
            for d in 0..18 {
                // Component 0 statics at +1, component 1 at -1; delta
                // streams stay at zero mean with huge variance so the solve
                // reduces to the static-only limit.
                raw[[ti, 2 + d]] = 1.0;
                raw[[ti, 2 + 54 + d]] = -1.0;
            }
            for d in 18..54 {
                raw[[ti, 2 + 2 * 54 + d]] = 14.0;
                raw[[ti, 2 + 3 * 54 + d]] = 14.0;
            }
        }
        let p = mdn_split(&raw, &cfg).unwrap();
        let out = smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::PerFrame).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-5));
    }

    #[test]
    fn smoothing_rejects_wrong_dim() {
        let cfg = MdnConfig::new(1, 18).unwrap();
        let raw = Array2::zeros((3, cfg.raw_width()));
        let p = mdn_split(&raw, &cfg).unwrap();
        assert!(matches!(
            smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::PerFrame),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pooled_mode_still_solves_and_smooths() {
        let t = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let means = Array2::from_shape_fn((t, 54), |_| rng.random::<f64>() * 2.0 - 1.0);
        let vars = Array2::from_shape_fn((t, 54), |_| 0.1 + rng.random::<f64>());
        let p = single_component_params(&means, &vars);
        let out = smooth_mdn_sequence(&p, &DeltaWindows::default(), VarianceMode::Pooled).unwrap();
        assert_eq!(out.data().dim(), (t, 18));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}
