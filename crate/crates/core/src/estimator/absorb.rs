//! High-dimensional fixed-effect absorption by alternating projections.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// One categorical factor: a level index per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<usize>,
    pub n_levels: usize,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<usize>) -> Self {
        let n_levels = levels.iter().copied().max().map_or(0, |m| m + 1);
        Factor {
            name: name.into(),
            levels,
            n_levels,
        }
    }

    fn counts(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_levels];
        for &l in &self.levels {
            c[l] += 1.0;
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsorbOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for AbsorbOptions {
    fn default() -> Self {
        AbsorbOptions {
            tolerance: 1e-10,
            max_sweeps: 500,
        }
    }
}

/// Demeans every column on all factors jointly. Returns the largest number
/// of sweeps any column needed.
pub fn absorb(columns: &mut [Vec<f64>], factors: &[Factor], opts: AbsorbOptions) -> Result<usize> {
    if factors.is_empty() {
        return Ok(0);
    }
    let counts: Vec<Vec<f64>> = factors.iter().map(Factor::counts).collect();
    let results: Vec<Result<usize>> = columns
        .par_iter_mut()
        .map(|col| absorb_column(col, factors, &counts, opts))
        .collect();
    let mut sweeps = 0;
    for r in results {
        sweeps = sweeps.max(r?);
    }
    Ok(sweeps)
}

fn absorb_column(col: &mut [f64], factors: &[Factor], counts: &[Vec<f64>], opts: AbsorbOptions) -> Result<usize> {
    let scale = col.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut sums: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; f.n_levels]).collect();
    let mut last_change = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let mut change = 0.0_f64;
        for ((f, c), s) in factors.iter().zip(counts).zip(sums.iter_mut()) {
            s.iter_mut().for_each(|x| *x = 0.0);
            for (v, &l) in col.iter().zip(&f.levels) {
                s[l] += v;
            }
            for (m, &n) in s.iter_mut().zip(c) {
                if n > 0.0 {
                    *m /= n;
                }
            }
            for (v, &l) in col.iter_mut().zip(&f.levels) {
                *v -= s[l];
            }
            change = s.iter().fold(change, |a, m| a.max(m.abs()));
        }
        last_change = change / scale;
        if last_change < opts.tolerance {
            return Ok(sweep);
        }
    }
    Err(Error::NonConvergence {
        sweeps: opts.max_sweeps,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_factor_is_group_demeaning() {
        let mut cols = vec![vec![1.0, 3.0, 10.0, 14.0]];
        let f = Factor::new("g", vec![0, 0, 1, 1]);
        absorb(&mut cols, &[f], AbsorbOptions::default()).unwrap();
        assert_eq!(cols[0], vec![-1.0, 1.0, -2.0, 2.0]);
    }

    #[test]
    fn two_way_additive_effects_vanish() {
        // y = a_i + b_t exactly
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 0.0, -1.0, 2.0];
        let mut y = Vec::new();
        let mut fi = Vec::new();
        let mut ft = Vec::new();
        for (i, ai) in a.iter().enumerate() {
            for (t, bt) in b.iter().enumerate() {
                if (i + t) % 5 == 4 {
                    continue; // unbalanced
                }
                y.push(ai + bt);
                fi.push(i);
                ft.push(t);
            }
        }
        let mut cols = vec![y];
        absorb(
            &mut cols,
            &[Factor::new("i", fi), Factor::new("t", ft)],
            AbsorbOptions::default(),
        )
        .unwrap();
        assert!(cols[0].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn sweep_cap_reports_non_convergence() {
        let mut cols = vec![vec![1.0, 5.0, 2.0, 7.0, 3.0]];
        let f1 = Factor::new("a", vec![0, 0, 1, 1, 2]);
        let f2 = Factor::new("b", vec![0, 1, 1, 2, 2]);
        let opts = AbsorbOptions {
            tolerance: 1e-14,
            max_sweeps: 1,
        };
        assert!(matches!(
            absorb(&mut cols, &[f1, f2], opts),
            Err(Error::NonConvergence { sweeps: 1, .. })
        ));
    }
}
