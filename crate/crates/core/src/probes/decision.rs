use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::{base_output, check_directions};
use super::{LabeledDirection, ProbeError};
use crate::model::{top_two, EmbeddingPoint, LstOutput, RepresentationMap};

/// Winner of one decision-map cell, relative to the top two tokens at `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    First,
    Second,
    /// Some third token beat both.
    Overflow,
}

impl Winner {
    pub fn code(self) -> u8 {
        match self {
            Winner::First => 0,
            Winner::Second => 1,
            Winner::Overflow => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Winner::First),
            1 => Some(Winner::Second),
            2 => Some(Winner::Overflow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapAxes {
    pub dir_i: String,
    pub dir_j: String,
    /// Both offsets run over `[-eps_range, eps_range]`.
    pub eps_range: f64,
    pub step: f64,
}

impl MapAxes {
    pub fn cells_per_side(&self) -> usize {
        (2.0 * self.eps_range / self.step).round() as usize + 1
    }

    /// Offset of grid index `k` along either axis.
    pub fn offset(&self, k: usize) -> f64 {
        -self.eps_range + k as f64 * self.step
    }
}

/// Grid of winners over `x0 + ε₁ v_i + ε₂ v_j`: rows follow `ε₂`, columns `ε₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMap {
    pub grid: Vec<Vec<Winner>>,
    pub axes: MapAxes,
    /// Token indices of the two leading logits at `x0`.
    pub tokens: (usize, usize),
    pub flip_frequency: f64,
    pub fragmentation: usize,
    pub crossing_density: f64,
    pub overflow_cells: usize,
}

/// `(flip_frequency, fragmentation, crossing_density)` of a rectangular grid.
///
/// Flip frequency is the share of 4-adjacent pairs whose labels differ,
/// fragmentation the number of 4-connected same-label regions, and crossing
/// density the label changes met by scanning every row and every column,
/// divided by `rows + cols`.
pub fn grid_metrics<T: PartialEq>(grid: &[Vec<T>]) -> (f64, usize, f64) {
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, 0, 0.0);
    }
    let mut pairs = 0usize;
    let mut differing = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                pairs += 1;
                differing += (grid[r][c] != grid[r][c + 1]) as usize;
            }
            if r + 1 < rows {
                pairs += 1;
                differing += (grid[r][c] != grid[r + 1][c]) as usize;
            }
        }
    }
    let flip = if pairs == 0 {
        0.0
    } else {
        differing as f64 / pairs as f64
    };
    // every differing adjacent pair is one crossing on exactly one scan line
    let crossing = differing as f64 / (rows + cols) as f64;
    (flip, components(grid), crossing)
}

fn components<T: PartialEq>(grid: &[Vec<T>]) -> usize {
    let (rows, cols) = (grid.len(), grid[0].len());
    let mut seen = vec![false; rows * cols];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(cell) = stack.pop() {
            let (r, c) = (cell / cols, cell % cols);
            let label = &grid[r][c];
            let mut visit = |rr: usize, cc: usize| {
                let k = rr * cols + cc;
                if !seen[k] && grid[rr][cc] == *label {
                    seen[k] = true;
                    stack.push(k);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < rows {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < cols {
                visit(r, c + 1);
            }
        }
    }
    count
}

fn winner(out: &LstOutput, tokens: (usize, usize)) -> Winner {
    match out.argmax_token {
        t if t == tokens.0 => Winner::First,
        t if t == tokens.1 => Winner::Second,
        _ => Winner::Overflow,
    }
}

pub fn decision_map<M: RepresentationMap>(
    model: &M,
    x0: &EmbeddingPoint,
    dir_i: &LabeledDirection,
    dir_j: &LabeledDirection,
    eps_range: f64,
    step: f64,
) -> Result<DecisionMap, ProbeError> {
    if !(eps_range > 0.0 && step > 0.0) {
        return Err(ProbeError::InvalidConfig("ε range and step must be positive".into()));
    }
    check_directions(&[dir_i.clone(), dir_j.clone()], model.width())?;
    let axes = MapAxes {
        dir_i: dir_i.label.clone(),
        dir_j: dir_j.label.clone(),
        eps_range,
        step,
    };
    let n = axes.cells_per_side();
    if n * n > 1_000_000 {
        return Err(ProbeError::InvalidConfig(format!("{n}×{n} grid exceeds 10⁶ cells")));
    }
    let base = base_output(model, x0)?;
    let (first, second) = top_two(&base.logits);
    let tokens = (first, second.unwrap_or(first));
    let cells = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / n, idx % n);
            let terms = [(axes.offset(c), dir_i.v.as_slice()), (axes.offset(r), dir_j.v.as_slice())];
            Ok(winner(&model.evaluate(x0, &terms)?, tokens))
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let grid: Vec<Vec<Winner>> = cells.chunks(n).map(<[Winner]>::to_vec).collect();
    let (flip_frequency, fragmentation, crossing_density) = grid_metrics(&grid);
    let overflow_cells = cells.iter().filter(|w| **w == Winner::Overflow).count();
    Ok(DecisionMap {
        grid,
        axes,
        tokens,
        flip_frequency,
        fragmentation,
        crossing_density,
        overflow_cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NearTieConfig {
    /// Target margin in logit units.
    pub tolerance: f64,
    /// First trial step of the line search.
    pub initial_step: f64,
    /// Doublings tried on each side before giving up.
    pub max_doublings: usize,
    pub max_bisections: usize,
}

impl Default for NearTieConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            initial_step: 1e-4,
            max_doublings: 40,
            max_bisections: 200,
        }
    }
}

/// Moves `start` along `direction` until the top-two logit margin is at
/// most the tolerance.
///
/// A doubling line search on both sides finds a step where the leading
/// token loses the lead; bisection then closes in on the crossing from the
/// side where it still leads. The returned point is `start` shifted in `f64`.
pub fn find_near_tie<M: RepresentationMap>(
    model: &M,
    start: &EmbeddingPoint,
    direction: &LabeledDirection,
    cfg: &NearTieConfig,
) -> Result<EmbeddingPoint, ProbeError> {
    check_directions(std::slice::from_ref(direction), model.width())?;
    let base = base_output(model, start)?;
    if base.margin <= cfg.tolerance {
        return Ok(start.clone());
    }
    let leader = base.argmax_token;
    let at = |t: f64| -> Result<LstOutput, ProbeError> {
        Ok(model.evaluate(&start.shifted(t, &direction.v), &[])?)
    };
    let mut bracket = None;
    'search: for k in 0..cfg.max_doublings {
        let t = cfg.initial_step * 2f64.powi(k as i32);
        for sign in [1.0, -1.0] {
            if at(sign * t)?.argmax_token != leader {
                bracket = Some((0.0, sign * t));
                break 'search;
            }
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        ProbeError::NoNearTie(format!(
            "token {leader} keeps the lead along `{}` for |t| ≤ {:e}",
            direction.label,
            cfg.initial_step * 2f64.powi(cfg.max_doublings as i32 - 1)
        ))
    })?;
    let mut margin = base.margin;
    for _ in 0..cfg.max_bisections {
        if margin <= cfg.tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let out = at(mid)?;
        if out.argmax_token == leader {
            lo = mid;
            margin = out.margin;
        } else {
            hi = mid;
        }
    }
    if margin > cfg.tolerance {
        return Err(ProbeError::NoNearTie(format!(
            "bisection stalled at margin {margin:e} above tolerance {:e}",
            cfg.tolerance
        )));
    }
    Ok(start.shifted(lo, &direction.v))
}
