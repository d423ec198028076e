//! Respiratory self-gating from the k-space center and retrospective binning.

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::RadialKSpace;
use crate::volume::C64;

/// Per-spoke respiratory surrogate, zero mean, sampled every `tr` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RespiratorySignal {
    pub amplitude: Vec<f64>,
    pub tr: f64,
}

impl RespiratorySignal {
    pub fn new(amplitude: Vec<f64>, tr: f64) -> Result<Self> {
        if !(tr > 0.0) || amplitude.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("signal needs finite values and tr > 0".into()));
        }
        Ok(Self { amplitude, tr })
    }

    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    fn centered(mut self) -> Self {
        let mean = mean(&self.amplitude);
        for v in &mut self.amplitude {
            *v -= mean;
        }
        self
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// First principal component of the coil x spoke matrix of DC magnitudes.
pub fn extract_dc_signal(k: &RadialKSpace) -> Result<RespiratorySignal> {
    let n_spokes = k.n_spokes();
    if n_spokes < 4 {
        return Err(Error::InvalidArgument(format!(
            "self-gating needs at least 4 spokes, got {n_spokes}"
        )));
    }
    let nc = k.n_coils;
    let mut rows: Vec<Vec<f64>> = (0..nc)
        .map(|c| (0..n_spokes).map(|s| k.sample(c, s, 0).norm()).collect())
        .collect();
    for row in &mut rows {
        let m = mean(row);
        row.iter_mut().for_each(|v| *v -= m);
    }
    let cov = DMatrix::from_fn(nc, nc, |a, b| {
        rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum::<f64>()
    });
    let eig = SymmetricEigen::new(cov);
    let top = (0..nc)
        .max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
        .unwrap_or(0);
    let u = eig.eigenvectors.column(top);
    let mut signal: Vec<f64> = (0..n_spokes)
        .map(|s| (0..nc).map(|c| u[c] * rows[c][s]).sum())
        .collect();

    // Orient so the signal rises with the coil-averaged DC magnitude.
    let avg: Vec<f64> = (0..n_spokes)
        .map(|s| rows.iter().map(|r| r[s]).sum::<f64>() / nc as f64)
        .collect();
    let corr: f64 = signal.iter().zip(&avg).map(|(a, b)| a * b).sum();
    if corr < 0.0 {
        signal.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(RespiratorySignal::new(signal, k.trajectory.tr)?.centered())
}

/// Direct-form-II-transposed second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(w0: f64, q: f64) -> Self {
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - c) / 2.0 / a0;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter in place, starting from the steady state for input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let g = self.dc_gain();
        let mut z2 = (self.b[2] - self.a[1] * g) * x0;
        let mut z1 = (g - self.b[0]) * x0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b[0] * xin + z1;
            z1 = self.b[1] * xin - self.a[0] * y + z2;
            z2 = self.b[2] * xin - self.a[1] * y;
            *v = y;
        }
    }
}

fn butterworth4(cutoff_hz: f64, fs: f64) -> [Biquad; 2] {
    let w0 = std::f64::consts::TAU * cutoff_hz / fs;
    let q1 = 1.0 / (2.0 * (std::f64::consts::PI / 8.0).cos());
    let q2 = 1.0 / (2.0 * (3.0 * std::f64::consts::PI / 8.0).cos());
    [Biquad::lowpass(w0, q1), Biquad::lowpass(w0, q2)]
}

/// Zero-phase 4th-order Butterworth low-pass (forward-backward), re-centered.
pub fn lowpass_filter(sig: &RespiratorySignal, cutoff_hz: f64) -> Result<RespiratorySignal> {
    let fs = 1.0 / sig.tr;
    if !(cutoff_hz > 0.0 && cutoff_hz < 0.5 * fs) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            0.5 * fs
        )));
    }
    let n = sig.len();
    if n < 2 {
        return Ok(sig.clone().centered());
    }
    let sections = butterworth4(cutoff_hz, fs);
    // Odd reflection about the end points, a few cutoff periods long.
    let pad = ((6.0 * fs / cutoff_hz).ceil() as usize).min(n - 1);
    let x = &sig.amplitude;
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    let out = ext[pad..pad + n].to_vec();
    Ok(RespiratorySignal::new(out, sig.tr)?.centered())
}

/// Frequency (Hz) of the largest non-DC peak of the signal's spectrum.
pub fn dominant_frequency(sig: &RespiratorySignal) -> f64 {
    let n = sig.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf: Vec<C64> = sig.amplitude.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let best = (1..=n / 2)
        .max_by(|&i, &j| buf[i].norm().total_cmp(&buf[j].norm()))
        .unwrap_or(0);
    best as f64 / (n as f64 * sig.tr)
}

/// Equal-count amplitude bins; state 0 holds the lowest amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionStateBins {
    pub n_states: usize,
    /// State index of every spoke.
    pub state_of_spoke: Vec<usize>,
    /// Spoke indices of each state, ascending.
    pub states: Vec<Vec<usize>>,
    /// Median centered amplitude of each state (`s_i`).
    pub medians: Vec<f64>,
}

impl MotionStateBins {
    pub fn n_spokes(&self) -> usize {
        self.state_of_spoke.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.states.iter().map(Vec::len).collect()
    }

    /// Medians rescaled by the largest magnitude, so the extreme state has |a| = 1.
    pub fn normalized_amplitudes(&self) -> Vec<f64> {
        let m = self.medians.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            self.medians.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; self.medians.len()]
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bin_spokes(sig: &RespiratorySignal, n_states: usize) -> Result<MotionStateBins> {
    let n = sig.len();
    if n_states < 1 || n < n_states {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} spokes into {n_states} states"
        )));
    }
    let amp = &sig.amplitude;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| amp[i].total_cmp(&amp[j]).then(i.cmp(&j)));

    let base = n / n_states;
    let extra = n % n_states;
    let mut state_of_spoke = vec![0; n];
    let mut states = Vec::with_capacity(n_states);
    let mut medians = Vec::with_capacity(n_states);
    let mut start = 0;
    for s in 0..n_states {
        let len = base + usize::from(s < extra);
        let mut members = order[start..start + len].to_vec();
        let values: Vec<f64> = members.iter().map(|&i| amp[i]).collect();
        medians.push(median(&values));
        members.sort_unstable();
        for &i in &members {
            state_of_spoke[i] = s;
        }
        states.push(members);
        start += len;
    }
    Ok(MotionStateBins {
        n_states,
        state_of_spoke,
        states,
        medians,
    })
}
