use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

fn noisy<R: Rng + ?Sized>(mean: &[f64], var: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(var)
        .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn sin1d_mean(theta: f64) -> f64 {
    (10.0 * theta).sin()
}

pub fn sin1d_noise(theta: f64) -> f64 {
    1.1 + 0.05 * (2.0 * PI * theta).sin()
}

pub fn eval_sin1d<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    noisy(&[sin1d_mean(theta)], &[sin1d_noise(theta)], rng)[0]
}

pub fn unimodal_mean(theta: &[f64]) -> Vec<f64> {
    let (u, v) = (20.0 * theta[0] - 10.0, 20.0 * theta[1] - 10.0);
    vec![0.26 * (u * u + v * v) - 0.48 * u * v]
}

/// Twice an isotropic bivariate normal density centred at (0.85, 0.85), variance 0.05.
pub fn unimodal_noise(theta: &[f64]) -> Vec<f64> {
    let s2 = 0.05;
    let r2 = (theta[0] - 0.85).powi(2) + (theta[1] - 0.85).powi(2);
    vec![2.0 * (-0.5 * r2 / s2).exp() / (2.0 * PI * s2)]
}

pub fn eval_unimodal<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> Vec<f64> {
    noisy(&unimodal_mean(theta), &unimodal_noise(theta), rng)
}

pub fn banana_mean(theta: &[f64]) -> Vec<f64> {
    let u = 40.0 * theta[0] - 20.0;
    vec![0.03 * u, 15.0 * theta[1] - 15.0 + 0.06 * u * u]
}

pub fn banana_noise(theta: &[f64]) -> Vec<f64> {
    let eta = banana_mean(theta);
    if theta[0] < 0.5 {
        vec![0.01 * eta[0].abs(), 0.01 * eta[1].abs()]
    } else {
        vec![0.1 * eta[0].abs(), 0.2 * eta[1].abs()]
    }
}

pub fn eval_banana<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> Vec<f64> {
    noisy(&banana_mean(theta), &banana_noise(theta), rng)
}

pub fn bimodal_mean(theta: &[f64]) -> Vec<f64> {
    let u = 12.0 * theta[0] - 6.0;
    let v = 12.0 * theta[1] - 4.0;
    vec![0.2f64.sqrt() * (v - u * u), 0.75f64.sqrt() * (v - u)]
}

pub fn bimodal_noise(theta: &[f64]) -> Vec<f64> {
    let r = 0.5 + 2.0 * (theta[0] * theta[0] + theta[1] * theta[1]);
    vec![r, r]
}

pub fn eval_bimodal<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> Vec<f64> {
    noisy(&bimodal_mean(theta), &bimodal_noise(theta), rng)
}
