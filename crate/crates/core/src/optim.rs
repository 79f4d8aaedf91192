//! Limited-memory BFGS with Armijo backtracking, shared by the geodesic
//! and LAND fitters.

use std::collections::VecDeque;

use crate::error::Result;

pub(crate) trait Problem {
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn gradient(&mut self, x: &[f64], value: f64) -> Result<Vec<f64>>;
    /// Called before outer iteration `iter` (1-based). Returns true when the
    /// objective itself changed, e.g. because random numbers were redrawn.
    fn refresh(&mut self, _iter: usize) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
    /// Length of the first steepest-descent trial step.
    pub initial_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    /// Objective after every accepted step, starting with the initial value.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn direction(g: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in memory.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub(crate) fn minimize(problem: &mut impl Problem, x0: Vec<f64>, settings: &Settings) -> Result<Outcome> {
    let mut x = x0;
    let mut f = problem.value(&x)?;
    let mut g = problem.gradient(&x, f)?;
    let mut values = vec![f];
    let mut memory: VecDeque<Pair> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 1..=settings.max_iters {
        if problem.refresh(iter) {
            f = problem.value(&x)?;
            g = problem.gradient(&x, f)?;
        }
        if inf_norm(&g) < settings.grad_tol {
            converged = true;
            break;
        }
        let mut d = direction(&g, &memory);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = if memory.is_empty() {
            (settings.initial_step / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            match problem.value(&xn) {
                Ok(fv) if fv.is_finite() && fv <= f + 1e-4 * alpha * slope => {
                    accepted = Some((xn, fv));
                    break;
                }
                Ok(_) => {}
                Err(e) if e.is_numerical() => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        iterations = iter;
        let gn = problem.gradient(&xn, fnew)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
            if memory.len() > settings.history {
                memory.pop_front();
            }
        }
        let stalled = f - fnew <= 1e-15 * f.abs().max(f64::MIN_POSITIVE);
        x = xn;
        f = fnew;
        g = gn;
        values.push(f);
        stalls = if stalled { stalls + 1 } else { 0 };
        if stalls >= 3 {
            break;
        }
    }
    if !converged {
        converged = inf_norm(&g) < settings.grad_tol;
    }
    Ok(Outcome {
        x,
        values,
        iterations,
        converged,
    })
}
