//! Softmax relaxation of a hidden-state model, trained by gradient ascent on the
//! expected log-likelihood, then fixed row by row into a deterministic table.

use super::{RadixLayout, TransitionTable};
use crate::error::{invalid, Error, Result};
use crate::seqio::{Sequences, Symbol};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const GRAD_CHUNK: usize = 64;
const MAX_GROWTH: f64 = 64.0;

/// Dense `S x S x m` logits are kept only up to this many states.
pub const MAX_SOFT_STATES: usize = 64;

/// Pseudo-mass added to Bayes emission counts so that `ln E` stays finite.
const BAYES_EPS: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionMode {
    /// Emissions re-estimated from beliefs: `E[s][x] ~ sum_{i: x_i = x} P_i[s]`.
    Bayes,
    /// Emissions from their own softmax logits `d[x][s]`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftHscm {
    states: usize,
    m: usize,
    /// `t[((r * m + x) * S) + s]`, softmax over `s`.
    t: Vec<f64>,
    /// `d[x * S + s]`, softmax over `x`.
    d: Vec<f64>,
    fixed: Vec<bool>,
    mode: EmissionMode,
}

/// Beliefs `P_i[s]` for one read, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBelief {
    pub states: usize,
    pub rows: Vec<f64>,
}

impl StateBelief {
    pub fn len(&self) -> usize {
        self.rows.len() / self.states
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.states..(i + 1) * self.states]
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl SoftHscm {
    pub fn uniform(states: usize, m: usize, mode: EmissionMode) -> Result<Self> {
        if states == 0 || states > MAX_SOFT_STATES {
            return Err(invalid(format!("soft model supports 1..={MAX_SOFT_STATES} states, got {states}")));
        }
        if m < 2 {
            return Err(invalid("alphabet size must be at least 2"));
        }
        Ok(Self {
            states,
            m,
            t: vec![0.0; states * m * states],
            d: vec![0.0; m * states],
            fixed: vec![false; states * m],
            mode,
        })
    }

    /// Uniform logits plus seeded uniform noise in `[-noise, noise]`.
    pub fn init(states: usize, m: usize, mode: EmissionMode, seed: u64, noise: f64) -> Result<Self> {
        let mut model = Self::uniform(states, m, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if noise > 0.0 {
            model.t.iter_mut().for_each(|v| *v = rng.gen_range(-noise..=noise));
            model.d.iter_mut().for_each(|v| *v = rng.gen_range(-noise..=noise));
        }
        Ok(model)
    }

    /// Exact soft form of a deterministic table: logit 0 on the target, `-inf` elsewhere.
    pub fn from_table(table: &TransitionTable, mode: EmissionMode) -> Result<Self> {
        let (s, m) = (table.state_count(), table.alphabet_size());
        let mut model = Self::uniform(s, m, mode)?;
        for r in 0..s {
            for x in 0..m {
                let row = &mut model.t[(r * m + x) * s..(r * m + x + 1) * s];
                row.fill(f64::NEG_INFINITY);
                row[table.next(r, x)] = 0.0;
            }
            for x in 0..m {
                model.d[x * s + r] = table.emission(r)[x].ln();
            }
        }
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> EmissionMode {
        self.mode
    }

    pub fn logits_t(&self) -> &[f64] {
        &self.t
    }

    pub fn logits_d(&self) -> &[f64] {
        &self.d
    }

    pub fn logits_t_mut(&mut self) -> &mut [f64] {
        &mut self.t
    }

    pub fn logits_d_mut(&mut self) -> &mut [f64] {
        &mut self.d
    }

    pub fn fixed_rows(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    /// All transition rows `T_x[r][.]`, indexed like the logits.
    pub fn transitions(&self) -> Vec<f64> {
        let s = self.states;
        let mut out = vec![0.0; self.t.len()];
        out.chunks_mut(s)
            .zip(self.t.chunks(s))
            .for_each(|(o, l)| softmax_into(l, o));
        out
    }

    /// Explicit emission table `E[s][x]` from the `d` logits.
    pub fn explicit_emissions(&self) -> Vec<f64> {
        let (s, m) = (self.states, self.m);
        let mut e = vec![0.0; s * m];
        let mut col = vec![0.0; m];
        let mut out = vec![0.0; m];
        for st in 0..s {
            for x in 0..m {
                col[x] = self.d[x * s + st];
            }
            softmax_into(&col, &mut out);
            e[st * m..(st + 1) * m].copy_from_slice(&out);
        }
        e
    }

    fn beliefs(&self, trans: &[f64], seq: &[Symbol]) -> Vec<f64> {
        let (s, m) = (self.states, self.m);
        let mut p = vec![0.0; seq.len() * s];
        if seq.is_empty() {
            return p;
        }
        p[0] = 1.0;
        for i in 0..seq.len() - 1 {
            let x = seq[i] as usize;
            let (cur, next) = p.split_at_mut((i + 1) * s);
            let cur = &cur[i * s..];
            let next = &mut next[..s];
            for r in 0..s {
                let pr = cur[r];
                if pr == 0.0 {
                    continue;
                }
                let row = &trans[(r * m + x) * s..(r * m + x + 1) * s];
                for (n, &t) in next.iter_mut().zip(row) {
                    *n += pr * t;
                }
            }
        }
        p
    }

    fn bayes_emissions(&self, beliefs: &[Vec<f64>], data: &Sequences) -> Vec<f64> {
        let (s, m) = (self.states, self.m);
        let mut w = vec![0.0; s * m];
        for (p, seq) in beliefs.iter().zip(&data.reads) {
            for (i, &x) in seq.iter().enumerate() {
                for st in 0..s {
                    w[st * m + x as usize] += p[i * s + st];
                }
            }
        }
        for row in w.chunks_mut(m) {
            let total: f64 = row.iter().sum::<f64>() + m as f64 * BAYES_EPS;
            row.iter_mut().for_each(|v| *v = (*v + BAYES_EPS) / total);
        }
        w
    }

    fn all_beliefs(&self, trans: &[f64], data: &Sequences) -> Vec<Vec<f64>> {
        data.reads.par_iter().map(|seq| self.beliefs(trans, seq)).collect()
    }

    fn emissions_for(&self, beliefs: &[Vec<f64>], data: &Sequences) -> Vec<f64> {
        match self.mode {
            EmissionMode::Bayes => self.bayes_emissions(beliefs, data),
            EmissionMode::Explicit => self.explicit_emissions(),
        }
    }

    /// `F = sum_i P_i . ln E[., x_i]` in nits, summed over reads.
    pub fn objective(&self, data: &Sequences) -> f64 {
        let trans = self.transitions();
        let beliefs = self.all_beliefs(&trans, data);
        let e = self.emissions_for(&beliefs, data);
        self.objective_with(&beliefs, &e, data)
    }

    fn objective_with(&self, beliefs: &[Vec<f64>], e: &[f64], data: &Sequences) -> f64 {
        let (s, m) = (self.states, self.m);
        beliefs
            .par_iter()
            .zip(&data.reads)
            .map(|(p, seq)| {
                let mut f = 0.0;
                for (i, &x) in seq.iter().enumerate() {
                    for st in 0..s {
                        let pi = p[i * s + st];
                        if pi != 0.0 {
                            f += pi * e[st * m + x as usize].ln();
                        }
                    }
                }
                f
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    /// Bits per value: `-F / (N ln 2)`.
    pub fn bpv(&self, data: &Sequences) -> f64 {
        -self.objective(data) / (data.total_len() as f64 * std::f64::consts::LN_2)
    }

    /// Beliefs and `F` for one sequence. In Bayes mode emissions are estimated from it.
    pub fn forward_evaluate(&self, seq: &[Symbol]) -> Result<(StateBelief, f64)> {
        if seq.is_empty() {
            return Err(invalid("forward evaluation needs a non-empty sequence"));
        }
        if seq.iter().any(|&x| x as usize >= self.m) {
            return Err(invalid("symbol outside model alphabet"));
        }
        let data = Sequences::single(self.m, seq.to_vec());
        let trans = self.transitions();
        let beliefs = vec![self.beliefs(&trans, seq)];
        let e = self.emissions_for(&beliefs, &data);
        let f = self.objective_with(&beliefs, &e, &data);
        Ok((
            StateBelief {
                states: self.states,
                rows: beliefs.into_iter().next().unwrap(),
            },
            f,
        ))
    }

    /// `F` and its gradient with respect to `t` and `d` (the latter zero in Bayes mode).
    pub fn gradient(&self, data: &Sequences) -> (f64, Vec<f64>, Vec<f64>) {
        let (s, m) = (self.states, self.m);
        let trans = self.transitions();
        let beliefs = self.all_beliefs(&trans, data);
        let e = self.emissions_for(&beliefs, data);
        let f = self.objective_with(&beliefs, &e, data);
        let log_e: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        let lg = |x: usize, r: usize| log_e[r * m + x];

        // fixed chunking keeps the float summation order independent of the thread count
        let partials: Vec<Vec<f64>> = beliefs
            .par_chunks(GRAD_CHUNK)
            .zip(data.reads.par_chunks(GRAD_CHUNK))
            .map(|(pc, sc)| {
                let mut acc = vec![0.0; s * m * s];
                for (p, seq) in pc.iter().zip(sc) {
                    let n = seq.len();
                    if n == 0 {
                        continue;
                    }
                    let mut g: Vec<f64> = (0..s).map(|r| lg(seq[n - 1] as usize, r)).collect();
                    let mut g_prev = vec![0.0; s];
                    for i in (0..n - 1).rev() {
                        let x = seq[i] as usize;
                        for r in 0..s {
                            let pr = p[i * s + r];
                            let base = (r * m + x) * s;
                            let mut back = 0.0;
                            for st in 0..s {
                                acc[base + st] += pr * g[st];
                                back += trans[base + st] * g[st];
                            }
                            g_prev[r] = lg(x, r) + back;
                        }
                        std::mem::swap(&mut g, &mut g_prev);
                    }
                }
                acc
            })
            .collect();
        let mut grad_trans = vec![0.0; s * m * s];
        for part in &partials {
            grad_trans.iter_mut().zip(part).for_each(|(x, y)| *x += y);
        }

        let mut grad_t = vec![0.0; s * m * s];
        for row in 0..s * m {
            if self.fixed[row] {
                continue;
            }
            let tr = &trans[row * s..(row + 1) * s];
            let gr = &grad_trans[row * s..(row + 1) * s];
            let mean: f64 = tr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for st in 0..s {
                grad_t[row * s + st] = tr[st] * (gr[st] - mean);
            }
        }

        let mut grad_d = vec![0.0; m * s];
        if self.mode == EmissionMode::Explicit {
            let mut w = vec![0.0; s * m];
            for (p, seq) in beliefs.iter().zip(&data.reads) {
                for (i, &x) in seq.iter().enumerate() {
                    for st in 0..s {
                        w[st * m + x as usize] += p[i * s + st];
                    }
                }
            }
            for st in 0..s {
                let total: f64 = w[st * m..(st + 1) * m].iter().sum();
                for x in 0..m {
                    grad_d[x * s + st] = w[st * m + x] - e[st * m + x] * total;
                }
            }
        }
        (f, grad_t, grad_d)
    }

    fn stepped(&self, gt: &[f64], gd: &[f64], eta: f64) -> Self {
        let mut next = self.clone();
        next.t.iter_mut().zip(gt).for_each(|(v, g)| *v += eta * g);
        if self.mode == EmissionMode::Explicit {
            next.d.iter_mut().zip(gd).for_each(|(v, g)| *v += eta * g);
        }
        next
    }

    /// Gradient ascent on `F / N`. A step is halved until `F` does not decrease; after an
    /// accepted step the next trial doubles it, up to `MAX_GROWTH * step_size`.
    pub fn refine(&mut self, data: &Sequences, steps: usize, step_size: f64) -> Result<()> {
        let n = data.total_len();
        if n == 0 || steps == 0 {
            return Ok(());
        }
        let mut trial = step_size;
        for _ in 0..steps {
            let (f, mut gt, mut gd) = self.gradient(data);
            if !f.is_finite() {
                return Err(Error::Optimization("objective is not finite".into()));
            }
            let scale = 1.0 / n as f64;
            gt.iter_mut().for_each(|g| *g *= scale);
            gd.iter_mut().for_each(|g| *g *= scale);
            let mut eta = trial;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand = self.stepped(&gt, &gd, eta);
                let fc = cand.objective(data);
                if fc.is_finite() && fc >= f {
                    *self = cand;
                    accepted = true;
                    trial = (eta * 2.0).min(step_size * MAX_GROWTH);
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftOptions {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub noise: f64,
    pub mode: EmissionMode,
    /// Ascent steps after each fixing during determinization.
    pub refix_steps: usize,
}

impl Default for SoftOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 2.0,
            seed: 0,
            noise: 0.5,
            mode: EmissionMode::Bayes,
            refix_steps: 5,
        }
    }
}

/// Initializes with seeded noise and runs `opts.steps` ascent steps.
pub fn optimize_soft(data: &Sequences, states: usize, opts: &SoftOptions) -> Result<SoftHscm> {
    data.validate()?;
    let mut model = SoftHscm::init(states, data.alphabet_size, opts.mode, opts.seed, opts.noise)?;
    model.refine(data, opts.steps, opts.step_size)?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct DeterminizeReport {
    pub table: TransitionTable,
    pub soft: SoftHscm,
    pub fixing_steps: usize,
    /// Training bpv after each fixing step.
    pub bpv_history: Vec<f64>,
}

/// Repeatedly fixes the most confident free row to its argmax and re-optimizes the rest.
pub fn determinize(model: &SoftHscm, data: &Sequences, opts: &SoftOptions) -> Result<DeterminizeReport> {
    if data.alphabet_size != model.m {
        return Err(invalid("data alphabet does not match soft model"));
    }
    let (s, m) = (model.states, model.m);
    let mut soft = model.clone();
    let mut fixing_steps = 0;
    let mut bpv_history = Vec::new();
    loop {
        let trans = soft.transitions();
        let mut best: Option<(usize, usize, f64)> = None;
        for row in 0..s * m {
            if soft.fixed[row] {
                continue;
            }
            let (arg, p) = trans[row * s..(row + 1) * s]
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            if best.is_none_or(|b| p > b.2) {
                best = Some((row, arg, p));
            }
        }
        let Some((row, arg, _)) = best else { break };
        let logits = &mut soft.t[row * s..(row + 1) * s];
        logits.fill(f64::NEG_INFINITY);
        logits[arg] = 0.0;
        soft.fixed[row] = true;
        fixing_steps += 1;
        soft.refine(data, opts.refix_steps, opts.step_size)?;
        if data.total_len() > 0 {
            bpv_history.push(soft.bpv(data));
        }
    }
    let trans = soft.transitions();
    let next: Vec<u32> = (0..s * m)
        .map(|row| {
            trans[row * s..(row + 1) * s]
                .iter()
                .position(|&v| v == 1.0)
                .expect("fixed rows are one-hot") as u32
        })
        .collect();
    let layout = RadixLayout::new(vec![s])?;
    let table = TransitionTable::new(m, next, vec![1.0 / m as f64; s * m], layout)?;
    let stats = table.state_stats(data);
    let table = table.with_emissions(&stats)?;
    Ok(DeterminizeReport {
        table,
        soft,
        fixing_steps,
        bpv_history,
    })
}

/// Largest `||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf)` over
/// all parameters, using central differences with step `h` on `F`.
pub fn gradient_check(model: &SoftHscm, data: &Sequences, h: f64) -> f64 {
    let (_, gt, gd) = model.gradient(data);
    let mut analytic = gt;
    let mut numeric = Vec::with_capacity(analytic.len() + gd.len());
    for k in 0..model.t.len() {
        let mut plus = model.clone();
        plus.t[k] += h;
        let mut minus = model.clone();
        minus.t[k] -= h;
        numeric.push((plus.objective(data) - minus.objective(data)) / (2.0 * h));
    }
    if model.mode == EmissionMode::Explicit {
        analytic.extend(gd);
        for k in 0..model.d.len() {
            let mut plus = model.clone();
            plus.d[k] += h;
            let mut minus = model.clone();
            minus.d[k] -= h;
            numeric.push((plus.objective(data) - minus.objective(data)) / (2.0 * h));
        }
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let denom = inf(&analytic).max(inf(&numeric));
    if denom == 0.0 {
        0.0
    } else {
        inf(&diff) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_seq(m: usize, n: usize, seed: u64) -> Vec<Symbol> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..m as Symbol)).collect()
    }

    #[test]
    fn single_state_is_order0_loglik() {
        let seq = vec![0, 0, 1, 2, 0, 1, 0, 0];
        let model = SoftHscm::uniform(1, 3, EmissionMode::Bayes).unwrap();
        let (_, f) = model.forward_evaluate(&seq).unwrap();
        let n = seq.len() as f64;
        let counts = [5.0, 2.0, 1.0];
        let expected: f64 = counts.iter().map(|c: &f64| c * (c / n).ln()).sum();
        assert!((f - expected).abs() < 1e-9);
    }

    #[test]
    fn uniform_model_gives_uniform_beliefs() {
        let seq = random_seq(4, 50, 1);
        let model = SoftHscm::uniform(3, 4, EmissionMode::Explicit).unwrap();
        let (b, f) = model.forward_evaluate(&seq).unwrap();
        assert_eq!(b.row(0), &[1.0, 0.0, 0.0]);
        for i in 1..b.len() {
            assert!(b.row(i).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        }
        assert!((f - 50.0 * (0.25f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn belief_rows_sum_to_one() {
        let seq = random_seq(3, 200, 2);
        let model = SoftHscm::init(5, 3, EmissionMode::Bayes, 7, 3.0).unwrap();
        let (b, _) = model.forward_evaluate(&seq).unwrap();
        for i in 0..b.len() {
            assert!((b.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let data = Sequences::single(2, random_seq(2, 30, 3));
        let opts = SoftOptions { steps: 0, seed: 11, ..Default::default() };
        let a = optimize_soft(&data, 3, &opts).unwrap();
        let b = SoftHscm::init(3, 2, opts.mode, 11, opts.noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = Sequences::single(2, random_seq(2, 20, 4));
        for mode in [EmissionMode::Explicit, EmissionMode::Bayes] {
            let model = SoftHscm::init(3, 2, mode, 5, 1.0).unwrap();
            assert!(gradient_check(&model, &data, 1e-5) < 1e-4);
        }
    }

    #[test]
    fn refine_never_decreases_objective() {
        let data = Sequences::single(3, random_seq(3, 300, 6));
        let mut model = SoftHscm::init(3, 3, EmissionMode::Bayes, 1, 0.5).unwrap();
        let before = model.objective(&data);
        model.refine(&data, 20, 1.0).unwrap();
        assert!(model.objective(&data) >= before);
    }

    #[test]
    fn single_state_determinizes_to_global_frequencies() {
        let seq = vec![0, 1, 1, 1, 2, 1, 0, 1];
        let data = Sequences::single(3, seq);
        let model = SoftHscm::uniform(1, 3, EmissionMode::Bayes).unwrap();
        let rep = determinize(&model, &data, &SoftOptions::default()).unwrap();
        assert_eq!(rep.fixing_steps, 3);
        // global frequencies with the 1/m pseudo-count
        let e = rep.table.emission(0);
        for (x, n) in [2.0, 5.0, 1.0].into_iter().enumerate() {
            assert!((e[x] - (n + 1.0 / 3.0) / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_model_is_fixed_point() {
        let m = 2;
        let next = vec![0, 1, 0, 1];
        let emit = vec![0.8, 0.2, 0.3, 0.7];
        let table = TransitionTable::new(m, next.clone(), emit, RadixLayout::new(vec![2]).unwrap()).unwrap();
        let soft = SoftHscm::from_table(&table, EmissionMode::Bayes).unwrap();
        let data = Sequences::single(2, random_seq(2, 100, 8));
        let rep = determinize(&soft, &data, &SoftOptions::default()).unwrap();
        assert_eq!(rep.fixing_steps, 4);
        assert_eq!(rep.soft.t, soft.t);
        assert_eq!(rep.table.next, next);
    }
}
