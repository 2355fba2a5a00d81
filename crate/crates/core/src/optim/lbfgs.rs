use std::collections::VecDeque;

use super::Evaluation;
use crate::tensor::{Real, Tensor};
use crate::Result;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

/// Limited-memory BFGS with a backtracking Armijo line search. A step that
/// finds no decrease leaves the iterate in place and clears the history.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    history: usize,
    max_line_search: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.f64()).collect()
}

impl Lbfgs {
    pub fn new(history: usize, max_line_search: usize) -> Self {
        Lbfgs {
            history,
            max_line_search,
            pairs: VecDeque::new(),
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            // First step: unit length along the gradient.
            let norm = dot(g, g).sqrt().max(f64::MIN_POSITIVE);
            q.iter_mut().for_each(|v| *v /= norm);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One outer iteration. `eval` maps a candidate to the (possibly
    /// projected) point actually evaluated and its evaluation.
    pub fn step<T: Real>(
        &mut self,
        x: &Tensor<T>,
        current: &Evaluation<T>,
        mut eval: impl FnMut(&Tensor<T>) -> Result<(Tensor<T>, Evaluation<T>)>,
    ) -> Result<(Tensor<T>, Evaluation<T>)> {
        let g = to_f64(&current.grad);
        let x0 = to_f64(x);
        let f0 = current.row.total;
        let mut d = self.direction(&g);
        if dot(&d, &g) >= 0.0 {
            self.pairs.clear();
            d = self.direction(&g);
        }
        let mut t = 1.0;
        for _ in 0..self.max_line_search {
            let cand = Tensor::new(
                x.shape().to_vec(),
                x0.iter().zip(&d).map(|(xi, di)| T::of(xi + t * di)).collect(),
            )?;
            let (cand, e) = eval(&cand)?;
            let xc = to_f64(&cand);
            let s: Vec<f64> = xc.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &s);
            if e.row.total.is_finite() && e.row.total <= f0 + ARMIJO_C * decrease && e.row.total < f0 {
                let gn = to_f64(&e.grad);
                let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                    if self.pairs.len() == self.history {
                        self.pairs.pop_front();
                    }
                    self.pairs.push_back((s, y, 1.0 / sy));
                }
                return Ok((cand, e));
            }
            t *= BACKTRACK;
        }
        self.pairs.clear();
        Ok((x.clone(), current.clone()))
    }
}
