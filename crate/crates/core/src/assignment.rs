//! One-to-one pairing of predicted and ground-truth masks.
//!
//! Rows are predictions, columns are ground-truth objects. Both matchers only
//! emit pairs with strictly positive weight.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("expected {expected} weights for a {rows}x{cols} matrix, got {got}")]
    Size {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("weight at ({row}, {col}) is {value}, outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
}

/// Dense row-major `rows x cols` matrix of scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, WeightError> {
        if data.len() != rows * cols {
            return Err(WeightError::Size {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (i, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(WeightError::OutOfRange {
                    row: i / cols,
                    col: i % cols,
                    value,
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, WeightError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(WeightError::Size {
                    rows: rows.len(),
                    cols,
                    expected: rows.len() * cols,
                    got: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair {
    pub pred: usize,
    pub gt: usize,
    pub weight: f64,
}

/// Injective set of `(pred, gt, weight)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<Pair>,
    pub rows: usize,
    pub cols: usize,
}

impl Assignment {
    pub fn total_weight(&self) -> f64 {
        self.pairs.iter().map(|p| p.weight).sum()
    }
}

/// Maximum-weight bipartite matching (Kuhn-Munkres with potentials).
///
/// Works on rectangular matrices by solving on the orientation with fewer
/// rows. Pairs are returned sorted by prediction index.
pub fn hungarian_match(w: &WeightMatrix) -> Assignment {
    let (n, k) = (w.rows, w.cols);
    if n == 0 || k == 0 {
        return Assignment {
            pairs: Vec::new(),
            rows: n,
            cols: k,
        };
    }
    let transposed = n > k;
    let (rows, cols) = if transposed { (k, n) } else { (n, k) };
    let weight = |r: usize, c: usize| if transposed { w.get(c, r) } else { w.get(r, c) };

    // Shortest augmenting path formulation, 1-based, minimising -weight.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        owner[0] = r;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = -weight(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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

    let mut pairs: Vec<Pair> = (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            let (pred, gt) = if transposed { (c, r) } else { (r, c) };
            Pair {
                pred,
                gt,
                weight: w.get(pred, gt),
            }
        })
        .filter(|p| p.weight > 0.0)
        .collect();
    pairs.sort_by_key(|p| p.pred);
    Assignment {
        pairs,
        rows: n,
        cols: k,
    }
}

/// Iteratively takes the highest-weight feasible cell until none with
/// positive weight remains. Ties break on lower pred index, then lower gt
/// index. Pairs are returned in selection order.
pub fn greedy_match(w: &WeightMatrix) -> Assignment {
    let mut cells: Vec<(usize, usize)> = (0..w.rows)
        .flat_map(|r| (0..w.cols).map(move |c| (r, c)))
        .filter(|&(r, c)| w.get(r, c) > 0.0)
        .collect();
    cells.sort_by(|&(r1, c1), &(r2, c2)| {
        w.get(r2, c2)
            .total_cmp(&w.get(r1, c1))
            .then(r1.cmp(&r2))
            .then(c1.cmp(&c2))
    });

    let mut row_used = vec![false; w.rows];
    let mut col_used = vec![false; w.cols];
    let mut pairs = Vec::new();
    for (r, c) in cells {
        if row_used[r] || col_used[c] {
            continue;
        }
        row_used[r] = true;
        col_used[c] = true;
        pairs.push(Pair {
            pred: r,
            gt: c,
            weight: w.get(r, c),
        });
        if pairs.len() == w.rows.min(w.cols) {
            break;
        }
    }
    Assignment {
        pairs,
        rows: w.rows,
        cols: w.cols,
    }
}

/// Pairs above the threshold plus the leftover indices on each side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub matched: Vec<Pair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    pub tau: f64,
}

impl MatchResult {
    pub fn matched_ious(&self) -> impl Iterator<Item = f64> + '_ {
        self.matched.iter().map(|p| p.weight)
    }
}

/// Keeps pairs whose weight strictly exceeds `tau`.
pub fn apply_threshold(a: &Assignment, tau: f64) -> MatchResult {
    let matched: Vec<Pair> = a.pairs.iter().copied().filter(|p| p.weight > tau).collect();
    let mut pred_hit = vec![false; a.rows];
    let mut gt_hit = vec![false; a.cols];
    for p in &matched {
        pred_hit[p.pred] = true;
        gt_hit[p.gt] = true;
    }
    MatchResult {
        matched,
        unmatched_pred: (0..a.rows).filter(|&i| !pred_hit[i]).collect(),
        unmatched_gt: (0..a.cols).filter(|&j| !gt_hit[j]).collect(),
        tau,
    }
}
