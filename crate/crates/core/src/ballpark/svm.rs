use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Soft-margin penalty.
    pub c: f64,
    /// Scale the penalty of each side by the other side's share so both
    /// classes carry equal total weight.
    pub balanced: bool,
    pub max_epochs: usize,
    /// Stop when the projected-gradient spread falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            balanced: true,
            max_epochs: 500,
            tol: 1e-3,
            seed: 0,
        }
    }
}

/// `f(x) = w·x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub epochs: usize,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

/// Soft-margin linear SVM with hinge loss, solved by dual coordinate
/// descent. The bias is learned as the weight of a constant feature 1, so
/// it is regularized together with `w`:
///
/// `min ½‖w‖² + ½b² + Σ Cᵢ max(0, 1 − yᵢ(w·xᵢ + b))`
///
/// Labels are `true` for the positive class.
pub fn train_linear_svm(xs: &[Vec<f64>], ys: &[bool], params: &SvmParams) -> Result<LinearSvm> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::param("svm needs matching, non-empty samples and labels"));
    }
    if params.c <= 0.0 {
        return Err(Error::param("svm penalty must be positive"));
    }
    let dim = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: x.len(),
        });
    }
    let n_pos = ys.iter().filter(|&&y| y).count();
    let n_neg = ys.len() - n_pos;
    let (c_pos, c_neg) = if params.balanced && n_pos > 0 && n_neg > 0 {
        let n = ys.len() as f64;
        (params.c * n / (2.0 * n_pos as f64), params.c * n / (2.0 * n_neg as f64))
    } else {
        (params.c, params.c)
    };

    let sign = |i: usize| if ys[i] { 1.0 } else { -1.0 };
    let upper: Vec<f64> = ys.iter().map(|&y| if y { c_pos } else { c_neg }).collect();
    let qii: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut alpha = vec![0.0; xs.len()];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut epochs = 0;

    while epochs < params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let y = sign(i);
            let g = y * (xs[i].iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == upper[i] {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, upper[i]);
                let step = (alpha[i] - old) * y;
                for (wd, xd) in w.iter_mut().zip(&xs[i]) {
                    *wd += step * xd;
                }
                b += step;
            }
        }
        if pg_max - pg_min < params.tol {
            break;
        }
    }
    Ok(LinearSvm { w, b, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    /// Exact dual solution by enumerating which multipliers sit at 0, at C,
    /// or strictly inside, solving the free block as a linear system and
    /// keeping the feasible KKT point with the lowest objective.
    fn qp_oracle(xs: &[Vec<f64>], ys: &[bool], c: f64) -> (Vec<f64>, f64) {
        let n = xs.len();
        let aug: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().copied().chain([1.0]).collect()).collect();
        let y: Vec<f64> = ys.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
        let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * aug[i].iter().zip(&aug[j]).map(|(a, b)| a * b).sum::<f64>());
        let objective = |a: &DVector<f64>| 0.5 * (a.transpose() * &q * a)[(0, 0)] - a.sum();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut state = vec![0u8; n];
            let mut c0 = code;
            for s in state.iter_mut() {
                *s = (c0 % 3) as u8;
                c0 /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let mut a = DVector::from_fn(n, |i, _| if state[i] == 1 { c } else { 0.0 });
            if !free.is_empty() {
                let m = free.len();
                let qff = DMatrix::from_fn(m, m, |r, s| q[(free[r], free[s])]);
                let rhs = DVector::from_fn(m, |r, _| {
                    1.0 - (0..n).filter(|j| state[*j] == 1).map(|j| q[(free[r], j)] * c).sum::<f64>()
                });
                let Some(sol) = qff.lu().solve(&rhs) else { continue };
                for (r, &i) in free.iter().enumerate() {
                    a[i] = sol[r];
                }
            }
            if a.iter().any(|&v| v < -1e-10 || v > c + 1e-10) {
                continue;
            }
            let grad = &q * &a - DVector::from_element(n, 1.0);
            let kkt = (0..n).all(|i| match state[i] {
                0 => grad[i] >= -1e-9,
                1 => grad[i] <= 1e-9,
                _ => grad[i].abs() < 1e-9,
            });
            if !kkt {
                continue;
            }
            let f = objective(&a);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf - 1e-12) {
                best = Some((f, a));
            }
        }
        let a = best.expect("a KKT point exists").1;
        let mut w = vec![0.0; aug[0].len()];
        for i in 0..n {
            for (d, v) in aug[i].iter().enumerate() {
                w[d] += a[i] * y[i] * v;
            }
        }
        let b = w.pop().unwrap();
        (w, b)
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        (
            vec![
                vec![2.0, 2.0],
                vec![1.5, 3.0],
                vec![0.4, 0.9],
                vec![-1.0, -0.5],
                vec![0.2, -1.5],
                vec![1.0, 0.6],
            ],
            vec![true, true, true, false, false, false],
        )
    }

    #[test]
    fn matches_qp_oracle_on_toy_problem() {
        let (xs, ys) = toy();
        for c in [0.1, 1.0, 10.0] {
            let params = SvmParams {
                c,
                balanced: false,
                max_epochs: 100_000,
                tol: 1e-10,
                seed: 7,
            };
            let svm = train_linear_svm(&xs, &ys, &params).unwrap();
            let (w, b) = qp_oracle(&xs, &ys, c);
            for x in &xs {
                let oracle = w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
                assert!((svm.decision(x) - oracle).abs() < 1e-4, "c={c}: {} vs {oracle}", svm.decision(x));
            }
        }
    }

    #[test]
    fn separable_clusters_have_no_training_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..30 {
            let pos = i < 10;
            let cx = if pos { 3.0 } else { -3.0 };
            xs.push(vec![cx + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            ys.push(pos);
        }
        let svm = train_linear_svm(&xs, &ys, &SvmParams::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(svm.decision(x) > 0.0, y);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (xs, ys) = toy();
        let a = train_linear_svm(&xs, &ys, &SvmParams::default()).unwrap();
        let b = train_linear_svm(&xs, &ys, &SvmParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
