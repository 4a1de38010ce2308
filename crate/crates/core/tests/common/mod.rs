//! Oracles shared by the integration tests, written independently of the
//! library's own network algebra.
#![allow(dead_code)]

use cryolna::network::{FrequencyGrid, Mat2, TwoPortNetwork};
use cryolna::trl::TrlStandardsMeasurement;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

type T2 = [[Complex64; 2]; 2];

fn s_to_t(s: &Mat2) -> T2 {
    let [[s11, s12], [s21, s22]] = s.0;
    let det = s11 * s22 - s12 * s21;
    [[-det / s21, s11 / s21], [-s22 / s21, ONE / s21]]
}

fn t_to_s(t: &T2) -> Mat2 {
    let [[t11, t12], [t21, t22]] = *t;
    let det = t11 * t22 - t12 * t21;
    Mat2::new(t12 / t22, det / t22, ONE / t22, -t21 / t22)
}

fn mul(a: &T2, b: &T2) -> T2 {
    let mut c = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Cascade by T-matrix product.
pub fn chain(nets: &[&TwoPortNetwork]) -> TwoPortNetwork {
    let grid = nets[0].grid().clone();
    let s = (0..grid.len())
        .map(|k| {
            let t = nets[1..].iter().fold(s_to_t(&nets[0].s()[k]), |acc, n| mul(&acc, &s_to_t(&n.s()[k])));
            t_to_s(&t)
        })
        .collect();
    TwoPortNetwork::new(grid, s).unwrap()
}

/// Reflection seen through `boxed` from its outer side when `gamma`
/// terminates the inner side. `port` 1 looks in from the left.
pub fn reflection_through(boxed: &Mat2, gamma: Complex64, port: usize) -> Complex64 {
    let [[s11, s12], [s21, s22]] = boxed.0;
    if port == 1 {
        s11 + s12 * s21 * gamma / (ONE - s22 * gamma)
    } else {
        s22 + s12 * s21 * gamma / (ONE - s11 * gamma)
    }
}

pub fn matched_line(grid: &FrequencyGrid, loss_db: f64, delay_s: f64) -> TwoPortNetwork {
    TwoPortNetwork::from_fn(grid.clone(), |f| {
        let t = Complex64::from_polar(10f64.powf(-loss_db / 20.0), -2.0 * PI * f * delay_s);
        Mat2::new(ZERO, t, t, ZERO)
    })
    .unwrap()
}

/// Reciprocal passive error box with mismatch and delay.
pub fn random_box(grid: &FrequencyGrid, rng: &mut impl Rng) -> TwoPortNetwork {
    let r11 = rng.random_range(0.0..0.2);
    let r22 = rng.random_range(0.0..0.2);
    let p11 = rng.random_range(-PI..PI);
    let p22 = rng.random_range(-PI..PI);
    let t = rng.random_range(0.4..0.8);
    let tau = rng.random_range(0.05e-9..2e-9);
    TwoPortNetwork::new_passive(
        grid.clone(),
        grid.points()
            .iter()
            .map(|&f| {
                let s21 = Complex64::from_polar(t, -2.0 * PI * f * tau);
                Mat2::new(Complex64::from_polar(r11, p11), s21, s21, Complex64::from_polar(r22, p22))
            })
            .collect(),
    )
    .unwrap()
}

/// Arbitrary (possibly active) two-port with a smooth frequency response.
pub fn random_dut(grid: &FrequencyGrid, rng: &mut impl Rng) -> TwoPortNetwork {
    let mut coef = || {
        let mag = rng.random_range(0.01..0.9);
        let ph = rng.random_range(-PI..PI);
        let tau = rng.random_range(0.0..0.5e-9);
        (mag, ph, tau)
    };
    let c = [coef(), coef(), coef(), coef()];
    let gain = rng.random_range(1.0..30.0);
    TwoPortNetwork::from_fn(grid.clone(), |f| {
        let e = |(m, p, tau): (f64, f64, f64), scale: f64| Complex64::from_polar(m * scale, p - 2.0 * PI * f * tau);
        Mat2::new(e(c[0], 1.0), e(c[1], 0.1), e(c[2], gain), e(c[3], 1.0))
    })
    .unwrap()
}

/// Raw TRL standards seen through boxes `a` and `b`.
pub fn synth_standards(
    a: &TwoPortNetwork,
    b: &TwoPortNetwork,
    line: &TwoPortNetwork,
    reflect: Complex64,
) -> (TwoPortNetwork, TwoPortNetwork, Vec<Complex64>, Vec<Complex64>) {
    let thru = chain(&[a, b]);
    let l = chain(&[a, line, b]);
    let w1 = a.s().iter().map(|m| reflection_through(m, reflect, 1)).collect();
    let w2 = b.s().iter().map(|m| reflection_through(m, reflect, 2)).collect();
    (thru, l, w1, w2)
}

/// Multiplicative complex Gaussian trace noise with `sigma_db` magnitude
/// spread.
pub fn noisy(z: Complex64, sigma_db: f64, rng: &mut impl Rng) -> Complex64 {
    let s = sigma_db * std::f64::consts::LN_10 / 20.0;
    let n: f64 = rng.sample(rand_distr::StandardNormal);
    let m: f64 = rng.sample(rand_distr::StandardNormal);
    z * (ONE + Complex64::new(s * n, s * m))
}

pub fn noisy_net(net: &TwoPortNetwork, sigma_db: f64, rng: &mut impl Rng) -> TwoPortNetwork {
    let s = net
        .s()
        .iter()
        .map(|m| {
            let [[a, b], [c, d]] = m.0;
            Mat2::new(
                noisy(a, sigma_db, rng),
                noisy(b, sigma_db, rng),
                noisy(c, sigma_db, rng),
                noisy(d, sigma_db, rng),
            )
        })
        .collect();
    TwoPortNetwork::new(net.grid().clone(), s).unwrap()
}

pub fn measurement(
    thru: TwoPortNetwork,
    line: TwoPortNetwork,
    w1: Vec<Complex64>,
    w2: Vec<Complex64>,
) -> TrlStandardsMeasurement {
    TrlStandardsMeasurement::new(thru, line, w1, w2).unwrap()
}

/// Rapp soft limiter on power: `P / (1 + (P/Psat)^p)^(1/p)`, all in dBm.
pub fn rapp_dbm(pin_dbm: f64, gain_db: f64, psat_dbm: f64, p: f64) -> f64 {
    let lin = 10f64.powf((pin_dbm + gain_db) / 10.0);
    let sat = 10f64.powf(psat_dbm / 10.0);
    10.0 * (lin / (1.0 + (lin / sat).powf(p)).powf(1.0 / p)).log10()
}

/// Output 1 dB compression point from a 1 mdB input sweep of the exact
/// transfer curve, linearly interpolated between the bracketing steps.
pub fn rapp_op1db(gain_db: f64, psat_dbm: f64, p: f64) -> f64 {
    let comp = |pin: f64| pin + gain_db - rapp_dbm(pin, gain_db, psat_dbm, p);
    let step = 1e-3;
    let mut pin = psat_dbm - gain_db - 40.0;
    let mut prev = comp(pin);
    loop {
        let next = comp(pin + step);
        if next >= 1.0 {
            let w = (1.0 - prev) / (next - prev);
            let a = rapp_dbm(pin, gain_db, psat_dbm, p);
            let b = rapp_dbm(pin + step, gain_db, psat_dbm, p);
            return a + w * (b - a);
        }
        pin += step;
        prev = next;
    }
}
