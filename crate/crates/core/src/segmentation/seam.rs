use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryImage;

/// Cost of routing a left-to-right seam through each pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamCost {
    width: usize,
    height: usize,
    cost: Vec<f64>,
}

/// Added to every ink pixel of a corridor; one pixel of ink outweighs any
/// detour through background.
pub const INK_PENALTY: f64 = 1000.0;

impl SeamCost {
    pub fn new(width: usize, height: usize, cost: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("seam cost map must be at least 1x1"));
        }
        if cost.len() != width * height {
            return Err(Error::param("seam cost buffer size mismatch"));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::param("seam costs must be finite and non-negative"));
        }
        Ok(Self {
            width,
            height,
            cost,
        })
    }

    /// `1 + INK_PENALTY * ink` over rows `[top, bottom)` of `img`.
    pub fn from_ink(img: &BinaryImage, top: usize, bottom: usize) -> Result<Self> {
        let bottom = bottom.min(img.height());
        if top >= bottom {
            return Err(Error::param("empty seam corridor"));
        }
        let mut cost = Vec::with_capacity(img.width() * (bottom - top));
        for y in top..bottom {
            for x in 0..img.width() {
                cost.push(if img.get(x, y) { 1.0 + INK_PENALTY } else { 1.0 });
            }
        }
        Self::new(img.width(), bottom - top, cost)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.cost[row * self.width + col]
    }

    /// Total cost of a path given as one row per column.
    pub fn path_cost(&self, rows: &[usize]) -> f64 {
        rows.iter().enumerate().map(|(c, &r)| self.at(r, c)).sum()
    }
}

/// Minimum-cost monotone left-to-right path (row step in {-1, 0, +1}) by
/// dynamic programming. Ties go to the smaller row index.
pub fn carve_seam(cost: &SeamCost) -> Vec<usize> {
    let (w, h) = (cost.width, cost.height);
    let mut acc = vec![0.0f64; w * h];
    // acc is column-major here: acc[c * h + r]
    for r in 0..h {
        acc[r] = cost.at(r, 0);
    }
    for c in 1..w {
        for r in 0..h {
            let prev = &acc[(c - 1) * h..c * h];
            let mut best = prev[r];
            if r > 0 && prev[r - 1] <= best {
                best = prev[r - 1];
            }
            if r + 1 < h && prev[r + 1] < best {
                best = prev[r + 1];
            }
            acc[c * h + r] = cost.at(r, c) + best;
        }
    }

    let last = &acc[(w - 1) * h..w * h];
    let mut row = 0;
    for r in 1..h {
        if last[r] < last[row] {
            row = r;
        }
    }
    let mut path = vec![0; w];
    path[w - 1] = row;
    for c in (1..w).rev() {
        let prev = &acc[(c - 1) * h..c * h];
        let lo = row.saturating_sub(1);
        let hi = (row + 1).min(h - 1);
        let mut best = lo;
        for r in lo..=hi {
            if prev[r] < prev[best] {
                best = r;
            }
        }
        row = best;
        path[c - 1] = row;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Enumerates every monotone path; returns the minimum total cost.
    fn brute_force_min(cost: &SeamCost) -> f64 {
        fn go(cost: &SeamCost, col: usize, row: usize, acc: f64, best: &mut f64) {
            let acc = acc + cost.at(row, col);
            if col + 1 == cost.width() {
                *best = best.min(acc);
                return;
            }
            for d in [-1isize, 0, 1] {
                let r = row as isize + d;
                if r >= 0 && (r as usize) < cost.height() {
                    go(cost, col + 1, r as usize, acc, best);
                }
            }
        }
        let mut best = f64::INFINITY;
        for r in 0..cost.height() {
            go(cost, 0, r, 0.0, &mut best);
        }
        best
    }

    fn random_map(rng: &mut impl Rng, w: usize, h: usize) -> SeamCost {
        SeamCost::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_cost_picks_top_row() {
        let cost = SeamCost::new(7, 4, vec![2.5; 28]).unwrap();
        let path = carve_seam(&cost);
        assert_eq!(path, vec![0; 7]);
        assert_eq!(cost.path_cost(&path), 7.0 * 2.5);
    }

    #[test]
    fn zero_corridor_is_followed() {
        let (w, h, r) = (9, 6, 4);
        let cost = SeamCost::new(w, h, (0..w * h).map(|i| if i / w == r { 0.0 } else { 3.0 }).collect()).unwrap();
        assert_eq!(carve_seam(&cost), vec![r; w]);
    }

    #[test]
    fn matches_exhaustive_enumeration_5x5() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cost = random_map(&mut rng, 5, 5);
            let path = carve_seam(&cost);
            assert!((cost.path_cost(&path) - brute_force_min(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn ink_corridor_avoids_ink() {
        let img = BinaryImage::from_ascii(&[
            "##########",
            "###....###",
            "...####...",
            "##########",
        ]);
        let cost = SeamCost::from_ink(&img, 0, 4).unwrap();
        let path = carve_seam(&cost);
        assert!(path.iter().enumerate().all(|(c, &r)| !img.get(c, r)));
    }

    #[test]
    fn rejects_bad_maps() {
        assert!(SeamCost::new(0, 3, vec![]).is_err());
        assert!(SeamCost::new(1, 1, vec![-1.0]).is_err());
        assert!(SeamCost::new(1, 1, vec![f64::NAN]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn path_is_monotone_and_no_worse_than_straight(seed in any::<u64>(), w in 1usize..12, h in 1usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cost = random_map(&mut rng, w, h);
            let path = carve_seam(&cost);
            prop_assert_eq!(path.len(), w);
            prop_assert!(path.iter().all(|&r| r < h));
            prop_assert!(path.windows(2).all(|p| p[0].abs_diff(p[1]) <= 1));
            let c = cost.path_cost(&path);
            for r in 0..h {
                prop_assert!(c <= cost.path_cost(&vec![r; w]) + 1e-9);
            }
        }
    }
}
