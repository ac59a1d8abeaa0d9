//! Daily-step chain-binomial compartmental models.
//!
//! A compartment of size `n` with total exit hazard `r` loses
//! `Binomial(n, 1 - exp(-r))` individuals per day; competing exits are split
//! binomially in proportion to their hazards. Population is conserved exactly.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

/// Initial conditions and horizon shared by both models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpidemicSetup {
    pub susceptible: u64,
    /// Initially infected (SIR) or exposed (SEIRDS).
    pub seeded: u64,
    pub days: usize,
}

impl Default for EpidemicSetup {
    fn default() -> Self {
        Self {
            susceptible: 1000,
            seeded: 10,
            days: 150,
        }
    }
}

fn exit_prob(hazard: f64) -> f64 {
    (-(-hazard.max(0.0)).exp_m1()).clamp(0.0, 1.0)
}

fn draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability checked above")
        .sample(rng)
}

fn time_average<const K: usize>(path: &[[u64; K]]) -> Vec<f64> {
    let days = (path.len() - 1) as f64;
    (0..K)
        .map(|k| path[1..].iter().map(|s| s[k] as f64).sum::<f64>() / days)
        .collect()
}

/// Compartment counts `(S, I, R)` for days `0..=days`.
pub fn sir_path<R: Rng + ?Sized>(
    beta: f64,
    gamma: f64,
    setup: &EpidemicSetup,
    rng: &mut R,
) -> Vec<[u64; 3]> {
    let n = (setup.susceptible + setup.seeded) as f64;
    let mut state = [setup.susceptible, setup.seeded, 0];
    let mut path = Vec::with_capacity(setup.days + 1);
    path.push(state);
    for _ in 0..setup.days {
        let [s, i, r] = state;
        let infections = draw(s, exit_prob(beta * i as f64 / n), rng);
        let recoveries = draw(i, exit_prob(gamma), rng);
        state = [s - infections, i + infections - recoveries, r + recoveries];
        path.push(state);
    }
    path
}

/// Time-averaged `(S, I, R)` over days `1..=days`.
pub fn sir_simulate<R: Rng + ?Sized>(
    beta: f64,
    gamma: f64,
    setup: &EpidemicSetup,
    rng: &mut R,
) -> Vec<f64> {
    time_average(&sir_path(beta, gamma, setup, rng))
}

/// Mean-field recursion of the same daily scheme: every binomial draw is
/// replaced by its expectation.
pub fn sir_deterministic(beta: f64, gamma: f64, setup: &EpidemicSetup) -> Vec<f64> {
    let n = (setup.susceptible + setup.seeded) as f64;
    let (mut s, mut i, mut r) = (setup.susceptible as f64, setup.seeded as f64, 0.0);
    let mut acc = [0.0; 3];
    for _ in 0..setup.days {
        let inf = s * exit_prob(beta * i / n);
        let rec = i * exit_prob(gamma);
        s -= inf;
        i += inf - rec;
        r += rec;
        for (a, v) in acc.iter_mut().zip([s, i, r]) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / setup.days as f64).collect()
}

/// SEIRDS transition rates in natural units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeirdsRates {
    pub beta: f64,
    pub delta: f64,
    pub gamma_r: f64,
    pub gamma_d: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub omega: f64,
}

impl SeirdsRates {
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            beta: v[0],
            delta: v[1],
            gamma_r: v[2],
            gamma_d: v[3],
            mu: v[4],
            epsilon: v[5],
            omega: v[6],
        }
    }

    fn removal(&self) -> (f64, f64) {
        let to_r = self.gamma_r * (1.0 - self.mu);
        let to_d = self.gamma_d * self.mu;
        (
            to_r + to_d,
            if to_r + to_d > 0.0 {
                to_d / (to_r + to_d)
            } else {
                0.0
            },
        )
    }
}

/// Counts `(S, E, I, R, D, cumulative infections)` for days `0..=days`.
///
/// Imports act as an extra per-capita hazard `epsilon` on susceptibles, and
/// the force of infection uses the living population.
pub fn seirds_path<R: Rng + ?Sized>(
    rates: &SeirdsRates,
    setup: &EpidemicSetup,
    rng: &mut R,
) -> Vec<[u64; 6]> {
    let (removal, death_share) = rates.removal();
    let mut state = [setup.susceptible, setup.seeded, 0, 0, 0, 0];
    let mut path = Vec::with_capacity(setup.days + 1);
    path.push(state);
    for _ in 0..setup.days {
        let [s, e, i, r, d, cum] = state;
        let alive = (s + e + i + r) as f64;
        let foi = if alive > 0.0 {
            rates.beta * i as f64 / alive
        } else {
            0.0
        };
        let infections = draw(s, exit_prob(foi + rates.epsilon), rng);
        let onsets = draw(e, exit_prob(rates.delta), rng);
        let exits = draw(i, exit_prob(removal), rng);
        let deaths = draw(exits, death_share, rng);
        let waned = draw(r, exit_prob(rates.omega), rng);
        state = [
            s - infections + waned,
            e + infections - onsets,
            i + onsets - exits,
            r + exits - deaths - waned,
            d + deaths,
            cum + infections,
        ];
        path.push(state);
    }
    path
}

pub fn seirds_simulate<R: Rng + ?Sized>(
    rates: &SeirdsRates,
    setup: &EpidemicSetup,
    rng: &mut R,
) -> Vec<f64> {
    time_average(&seirds_path(rates, setup, rng))
}

pub fn seirds_deterministic(rates: &SeirdsRates, setup: &EpidemicSetup) -> Vec<f64> {
    let (removal, death_share) = rates.removal();
    let mut x = [
        setup.susceptible as f64,
        setup.seeded as f64,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    let mut acc = [0.0; 6];
    for _ in 0..setup.days {
        let [s, e, i, r, d, cum] = x;
        let alive = s + e + i + r;
        let foi = if alive > 0.0 {
            rates.beta * i / alive
        } else {
            0.0
        };
        let inf = s * exit_prob(foi + rates.epsilon);
        let ons = e * exit_prob(rates.delta);
        let ex = i * exit_prob(removal);
        let dead = ex * death_share;
        let wan = r * exit_prob(rates.omega);
        x = [
            s - inf + wan,
            e + inf - ons,
            i + ons - ex,
            r + ex - dead - wan,
            d + dead,
            cum + inf,
        ];
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / setup.days as f64).collect()
}
