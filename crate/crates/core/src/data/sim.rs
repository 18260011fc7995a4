//! Stochastic fire-spread cellular automaton observed through a noisy sensor.
//!
//! Each cell carries fuel, moisture and a burning flag; a global wind vector
//! follows a bounded random walk. Only a noisy, gappy view of the fire and a
//! few smoothed climate covariates are emitted. Fuel is never observed.

use std::f64::consts::TAU;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stack::{GridStack, StackHeader};
use crate::error::{Error, Result};
use crate::frames::ObservationFrame;

/// Four-neighbourhood offsets `(dy, dx)`.
const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const CLIMATE_NAMES: [&str; 4] = ["moisture", "temperature", "wind_u", "wind_v"];
const WEEKS_PER_YEAR: f64 = 365.25 / 7.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub height: usize,
    pub width: usize,
    /// Emitted channels: fire plus `channels - 1` climate covariates.
    pub channels: usize,
    /// Spread probability scale.
    pub spread_base: f64,
    /// Spontaneous ignition probability per cell-week at full fuel and zero moisture.
    pub ignition_rate: f64,
    /// Fuel consumed per burning week.
    pub burn_rate: f64,
    /// Fires go out once fuel drops below this.
    pub extinguish_below: f64,
    /// Chance per week that a burning cell goes out regardless of fuel.
    pub douse_rate: f64,
    pub initial_fuel_min: f64,
    pub moisture_mean: f64,
    pub moisture_amplitude: f64,
    /// Amplitude of the fixed spatial moisture pattern.
    pub moisture_spatial: f64,
    pub moisture_noise: f64,
    /// Standard deviation of the weekly wind increments.
    pub wind_step: f64,
    /// Largest wind component magnitude.
    pub wind_max: f64,
    /// Sensor noise on every emitted value.
    pub noise_sigma: f64,
    /// Probability that a pixel of the fire channel reads zero.
    pub dropout_p: f64,
    pub start_date: NaiveDate,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 5,
            spread_base: 0.2,
            ignition_rate: 0.003,
            burn_rate: 0.03,
            extinguish_below: 0.05,
            douse_rate: 0.2,
            initial_fuel_min: 0.4,
            moisture_mean: 0.5,
            moisture_amplitude: 0.3,
            moisture_spatial: 0.15,
            moisture_noise: 0.05,
            wind_step: 0.15,
            wind_max: 0.8,
            noise_sigma: 0.05,
            dropout_p: 0.5,
            start_date: NaiveDate::from_ymd_opt(2001, 1, 1).expect("valid date"),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("simulator grid and channel count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} must lie in [0,1)", self.dropout_p)));
        }
        let probs = [
            ("spread_base", self.spread_base),
            ("ignition_rate", self.ignition_rate),
            ("douse_rate", self.douse_rate),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} must lie in [0,1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.moisture_noise >= 0.0 && self.wind_step >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names = vec!["fire".to_string()];
        for c in 1..self.channels {
            let base = CLIMATE_NAMES[(c - 1) % CLIMATE_NAMES.len()];
            let round = (c - 1) / CLIMATE_NAMES.len();
            names.push(if round == 0 { base.to_string() } else { format!("{base}_{}", round + 1) });
        }
        names
    }
}

/// Latent simulator state.
#[derive(Clone, Debug)]
pub struct SimWorld {
    pub config: SimConfig,
    pub week: i64,
    pub fuel: Vec<f64>,
    pub moisture: Vec<f64>,
    pub burning: Vec<bool>,
    pub wind: (f64, f64),
    /// Fixed per-cell moisture offsets.
    spatial: Vec<f64>,
    rng: ChaCha8Rng,
}

/// Seasonal moisture term: wettest in spring, driest in autumn.
fn seasonal(week: i64) -> f64 {
    // Phase chosen so the peak falls in mid-April (week ~15).
    (TAU * (week as f64 - 15.0) / WEEKS_PER_YEAR).cos()
}

impl SimWorld {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (config.height, config.width);
        let fuel = (0..h * w)
            .map(|_| rng.random_range(config.initial_fuel_min..=1.0))
            .collect();
        // A smooth random field: two low-frequency waves with random phase.
        let (p1, p2): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
        let spatial = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
                config.moisture_spatial * 0.5 * ((TAU * x + p1).sin() + (TAU * y + p2).cos())
            })
            .collect();
        let mut world = Self {
            week: 0,
            fuel,
            moisture: vec![0.0; h * w],
            burning: vec![false; h * w],
            wind: (0.0, 0.0),
            spatial,
            rng,
            config,
        };
        world.update_moisture();
        Ok(world)
    }

    pub fn cells(&self) -> usize {
        self.fuel.len()
    }

    pub fn burning_count(&self) -> usize {
        self.burning.iter().filter(|&&b| b).count()
    }

    /// Observed fire intensity of each cell.
    pub fn intensity(&self) -> Vec<f32> {
        self.burning.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn update_moisture(&mut self) {
        let c = &self.config;
        let season = c.moisture_mean + c.moisture_amplitude * seasonal(self.week);
        let noise = Normal::new(0.0, c.moisture_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
        for (m, s) in self.moisture.iter_mut().zip(&self.spatial) {
            let e = if c.moisture_noise > 0.0 { noise.sample(&mut self.rng) } else { 0.0 };
            *m = (season + s + e).clamp(0.0, 1.0);
        }
    }

    /// Probability that burning cell `from` ignites its neighbour `to`.
    pub fn spread_probability(&self, from: usize, to: usize) -> f64 {
        let w = self.config.width as isize;
        let (dy, dx) = ((to as isize / w - from as isize / w) as f64, (to as isize % w - from as isize % w) as f64);
        let align = (1.0 + self.wind.0 * dx + self.wind.1 * dy).max(0.0);
        (self.config.spread_base * self.fuel[to] * (1.0 - self.moisture[to]) * align).clamp(0.0, 1.0)
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (h, w) = (self.config.height as isize, self.config.width as isize);
        let (y, x) = (i as isize / w, i as isize % w);
        NEIGHBOURS.iter().filter_map(move |&(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            (ny >= 0 && ny < h && nx >= 0 && nx < w).then_some((ny * w + nx) as usize)
        })
    }

    /// Advances one week.
    pub fn step(&mut self) {
        self.week += 1;
        let c = self.config.clone();
        let step = Normal::new(0.0, c.wind_step.max(f64::MIN_POSITIVE)).expect("valid sigma");
        if c.wind_step > 0.0 {
            self.wind.0 = (self.wind.0 + step.sample(&mut self.rng)).clamp(-c.wind_max, c.wind_max);
            self.wind.1 = (self.wind.1 + step.sample(&mut self.rng)).clamp(-c.wind_max, c.wind_max);
        }
        self.update_moisture();

        let n = self.cells();
        let mut ignite = vec![false; n];
        for i in 0..n {
            if !self.burning[i] {
                continue;
            }
            for j in self.neighbours(i).collect::<Vec<_>>() {
                if self.burning[j] || self.fuel[j] < c.extinguish_below {
                    continue;
                }
                let p = self.spread_probability(i, j);
                if self.rng.random::<f64>() < p {
                    ignite[j] = true;
                }
            }
        }
        for (i, flag) in ignite.iter_mut().enumerate() {
            if self.burning[i] || self.fuel[i] < c.extinguish_below {
                continue;
            }
            let p = c.ignition_rate * self.fuel[i] * (1.0 - self.moisture[i]);
            if self.rng.random::<f64>() < p {
                *flag = true;
            }
        }
        for i in 0..n {
            if self.burning[i] {
                self.fuel[i] = (self.fuel[i] - c.burn_rate).max(0.0);
                let doused = self.rng.random::<f64>() < c.douse_rate;
                if self.fuel[i] < c.extinguish_below || doused {
                    self.burning[i] = false;
                }
            } else if ignite[i] {
                self.burning[i] = true;
            }
        }
    }

    /// Noisy partial view of the current week. Values lie in `[0,1]`.
    pub fn observe(&self, noise_sigma: f64, dropout_p: f64, seed: u64) -> ObservationFrame {
        let c = &self.config;
        let (h, w) = (c.height, c.width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let sample = |rng: &mut ChaCha8Rng| if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        let mut data = Vec::with_capacity(c.channels * h * w);
        for b in &self.burning {
            let v = if *b { 1.0 } else { 0.0 };
            let reading = (v + sample(&mut rng)).clamp(0.0, 1.0);
            let missed = rng.random::<f64>() < dropout_p;
            data.push(if missed { 0.0 } else { reading as f32 });
        }
        let smoothed = box_blur(&self.moisture, h, w);
        let temperature = 0.5 - 0.35 * seasonal(self.week);
        for ch in 1..c.channels {
            for s in &smoothed {
                let base = match (ch - 1) % CLIMATE_NAMES.len() {
                    0 => *s,
                    1 => temperature - 0.2 * (s - c.moisture_mean),
                    2 => 0.5 + 0.5 * self.wind.0 / c.wind_max.max(1e-9),
                    _ => 0.5 + 0.5 * self.wind.1 / c.wind_max.max(1e-9),
                };
                data.push((base + sample(&mut rng)).clamp(0.0, 1.0) as f32);
            }
        }
        ObservationFrame {
            channels: c.channels,
            height: h,
            width: w,
            week: self.week,
            data,
        }
    }
}

/// 3×3 mean filter with edge clamping.
fn box_blur(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    sum += v[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = sum / n;
        }
    }
    out
}

/// Observation stack and binary ground-truth stack of a simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub obs: GridStack,
    pub truth: GridStack,
}

/// Smallest stream length accepted for window length `k` and horizon `t`.
pub fn min_weeks(k: usize, t: usize) -> usize {
    k + t + 10
}

/// Simulates `weeks` weeks; identical inputs give identical stacks.
pub fn generate_dataset(config: &SimConfig, weeks: usize, seed: u64) -> Result<SyntheticDataset> {
    if weeks == 0 {
        return Err(Error::Config("weeks must be positive".into()));
    }
    let mut world = SimWorld::new(config.clone(), seed)?;
    let mut obs_rng = ChaCha8Rng::seed_from_u64(seed);
    obs_rng.set_stream(1);
    let (h, w, ch) = (config.height, config.width, config.channels);
    let mut obs = Vec::with_capacity(weeks * ch * h * w);
    let mut truth = Vec::with_capacity(weeks * h * w);
    for k in 0..weeks {
        if k > 0 {
            world.step();
        }
        let frame = world.observe(config.noise_sigma, config.dropout_p, obs_rng.random());
        obs.extend_from_slice(&frame.data);
        truth.extend(world.intensity().into_iter().map(|v| if v >= 0.5 { 1.0f32 } else { 0.0 }));
    }
    let header = |channels: usize, names: Vec<String>| StackHeader {
        height: h,
        width: w,
        channels,
        frame_count: weeks,
        week0: config.start_date,
        first_week: 0,
        channel_names: names,
        channel_min: vec![0.0; channels],
        channel_max: vec![1.0; channels],
    };
    Ok(SyntheticDataset {
        obs: GridStack::new(header(ch, config.channel_names()), obs)?,
        truth: GridStack::new(header(1, vec!["fire_truth".into()]), truth)?,
    })
}
