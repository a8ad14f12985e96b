//! Brownian increments, their coarsening for coupled refinement studies, and
//! the multiplicative noise coefficients `σ_ii(u)`.
//!
//! Each sample owns an independent ChaCha8 stream selected by
//! `(base_seed, sample_index)`, so a path never depends on which worker
//! produced it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpeciesField;

/// Shape of the diagonal noise coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Off,
    /// `c sqrt(1 + u_i)`
    DiagonalSqrt,
    /// `c u_i`, vanishing at zero and globally Lipschitz
    DiagonalLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub c: f64,
    /// Brownian drivers per species: mode 0 is spatially constant, mode `m ≥ 1`
    /// has profile `sqrt(2) cos(mπx) / m`.
    #[serde(default = "one")]
    pub modes: usize,
}

fn one() -> usize {
    1
}

impl NoiseSpec {
    pub fn off() -> Self {
        NoiseSpec {
            kind: NoiseKind::Off,
            c: 0.0,
            modes: 1,
        }
    }

    pub fn diagonal_sqrt(c: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::DiagonalSqrt,
            c,
            modes: 1,
        }
    }

    pub fn diagonal_linear(c: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::DiagonalLinear,
            c,
            modes: 1,
        }
    }

    pub fn with_modes(mut self, modes: usize) -> Self {
        self.modes = modes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::param("model.noise.c", format!("must be nonnegative, got {}", self.c)));
        }
        if self.modes == 0 {
            return Err(Error::param("model.noise.modes", "need at least one mode"));
        }
        Ok(())
    }

    /// True when the noise term is identically zero.
    pub fn is_off(&self) -> bool {
        self.kind == NoiseKind::Off || self.c == 0.0
    }

    /// Number of scalar Brownian drivers for `n_species` species.
    pub fn drivers(&self, n_species: usize) -> usize {
        n_species * self.modes
    }
}

/// Brownian increments over a uniform time partition, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    drivers: usize,
    n_steps: usize,
    dt: f64,
    base_seed: u64,
    sample_index: u64,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    /// Increments of all drivers over step `k`.
    pub fn step(&self, k: usize) -> &[f64] {
        &self.increments[k * self.drivers..(k + 1) * self.drivers]
    }

    /// Increment of one driver over step `k`.
    pub fn get(&self, driver: usize, k: usize) -> f64 {
        self.increments[k * self.drivers + driver]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// A path of all-zero increments, used when the noise is switched off.
    pub fn zeros(drivers: usize, n_steps: usize, dt: f64) -> Self {
        NoisePath {
            drivers,
            n_steps,
            dt,
            base_seed: 0,
            sample_index: 0,
            increments: vec![0.0; drivers * n_steps],
        }
    }

    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        coarsen(self, factor)
    }
}

/// Draw i.i.d. `N(0, dt)` increments for `drivers` Brownian motions.
///
/// Deterministic in `(base_seed, sample_index)`.
pub fn sample_path(
    drivers: usize,
    n_steps: usize,
    dt: f64,
    base_seed: u64,
    sample_index: u64,
) -> Result<NoisePath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(sample_index);
    let scale = dt.sqrt();
    let increments = (0..drivers * n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    Ok(NoisePath {
        drivers,
        n_steps,
        dt,
        base_seed,
        sample_index,
        increments,
    })
}

/// Sum blocks of `factor` consecutive increments: the coarse path is driven
/// by the same Brownian motion as the fine one.
pub fn coarsen(path: &NoisePath, factor: usize) -> Result<NoisePath> {
    if factor == 0 || !path.n_steps.is_multiple_of(factor) {
        return Err(Error::param(
            "coarsen.factor",
            format!("{factor} does not divide {} steps", path.n_steps),
        ));
    }
    let d = path.drivers;
    let n_coarse = path.n_steps / factor;
    let mut increments = vec![0.0; d * n_coarse];
    for k in 0..n_coarse {
        let out = &mut increments[k * d..(k + 1) * d];
        for fine in k * factor..(k + 1) * factor {
            for (o, w) in out.iter_mut().zip(path.step(fine)) {
                *o += w;
            }
        }
    }
    Ok(NoisePath {
        drivers: d,
        n_steps: n_coarse,
        dt: path.dt * factor as f64,
        base_seed: path.base_seed,
        sample_index: path.sample_index,
        increments,
    })
}

/// Spatial profile of driver mode `m` at `x`.
#[inline]
pub fn mode_profile(m: usize, x: f64) -> f64 {
    if m == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (m as f64 * std::f64::consts::PI * x).cos() / m as f64
    }
}

/// Add `Σ_m σ_i(u) e_m ΔW_{i,m}` for every species to `out` (same layout as
/// `u`). Returns the number of nodes where `1 + u_i < 0` had to be clamped.
pub fn add_noise_term(spec: &NoiseSpec, u: &SpeciesField, dw: &[f64], out: &mut [f64]) -> Result<usize> {
    let n = u.n_species();
    let drivers = spec.drivers(n);
    if dw.len() != drivers {
        return Err(Error::DimensionMismatch {
            context: "noise increments",
            expected: drivers,
            actual: dw.len(),
        });
    }
    if out.len() != u.as_slice().len() {
        return Err(Error::DimensionMismatch {
            context: "noise output",
            expected: u.as_slice().len(),
            actual: out.len(),
        });
    }
    if spec.kind == NoiseKind::Off {
        return Ok(0);
    }
    let nodes = u.nodes();
    let cells = u.cells() as f64;
    let mut clamps = 0;
    for i in 0..n {
        let ui = u.species(i);
        let oi = &mut out[i * nodes..(i + 1) * nodes];
        let dwi = &dw[i * spec.modes..(i + 1) * spec.modes];
        for (j, (o, &v)) in oi.iter_mut().zip(ui).enumerate() {
            let amp = match spec.kind {
                NoiseKind::DiagonalSqrt => {
                    let arg = 1.0 + v;
                    if arg < 0.0 {
                        clamps += 1;
                        0.0
                    } else {
                        spec.c * arg.sqrt()
                    }
                }
                NoiseKind::DiagonalLinear => spec.c * v,
                NoiseKind::Off => unreachable!(),
            };
            let drive = if spec.modes == 1 {
                dwi[0]
            } else {
                let x = j as f64 / cells;
                dwi.iter().enumerate().map(|(m, w)| mode_profile(m, x) * w).sum()
            };
            *o += amp * drive;
        }
    }
    Ok(clamps)
}

/// Noise contribution of one step together with its clamp count.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTerm {
    pub values: SpeciesField,
    pub clamp_events: usize,
}

/// Evaluate `σ(u) ΔW` as a field shaped like `u`.
pub fn sigma_apply(spec: &NoiseSpec, u: &SpeciesField, dw: &[f64]) -> Result<NoiseTerm> {
    let mut values = u.scaled(0.0);
    let clamp_events = add_noise_term(spec, u, dw, values.as_mut_slice())?;
    Ok(NoiseTerm {
        values,
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> (f64, usize) {
        let n = xs.clone().count();
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var, n)
    }

    #[test]
    fn same_seed_same_path() {
        let a = sample_path(2, 100, 1e-3, 42, 7).unwrap();
        let b = sample_path(2, 100, 1e-3, 42, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_path(2, 100, 1e-3, 42, 8).unwrap();
        assert_ne!(a.increments(), c.increments());
        assert_ne!(a.get(0, 0), c.get(0, 0));
        let d = sample_path(2, 100, 1e-3, 43, 7).unwrap();
        assert_ne!(a.increments(), d.increments());
    }

    #[test]
    fn increment_variance_matches_dt() {
        let dt = 1e-3;
        let path = sample_path(1, 1_000_000, dt, 1, 0).unwrap();
        let (var, n) = sample_variance(path.increments().iter().copied());
        // std error of the sample variance of a Gaussian is dt * sqrt(2 / (n - 1))
        let se = dt * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - dt).abs() <= 3.0 * se, "var {var}, se {se}");
    }

    #[test]
    fn coarsen_basics() {
        let path = sample_path(2, 12, 0.5, 3, 1).unwrap();
        assert_eq!(coarsen(&path, 1).unwrap(), path);
        let total = coarsen(&path, 12).unwrap();
        assert_eq!(total.n_steps(), 1);
        assert_eq!(total.dt(), 6.0);
        for d in 0..2 {
            let sum: f64 = (0..12).map(|k| path.get(d, k)).sum();
            assert!((total.get(d, 0) - sum).abs() < 1e-14);
        }
        assert!(coarsen(&path, 5).is_err());
        assert!(coarsen(&path, 0).is_err());
    }

    #[test]
    fn coarsened_variance_scales() {
        let dt = 1e-4;
        let factor = 8;
        let path = sample_path(1, 800_000, dt, 9, 0).unwrap();
        let coarse = coarsen(&path, factor).unwrap();
        let (var, n) = sample_variance(coarse.increments().iter().copied());
        let target = dt * factor as f64;
        let se = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() <= 3.0 * se);
    }

    #[test]
    fn coupled_constant_sigma_endpoints_agree() {
        // du = σ dW with σ constant: the endpoint is σ W(T) for every level
        let path = sample_path(1, 64, 1e-2, 5, 2).unwrap();
        let sigma = 0.3;
        let endpoint = |p: &NoisePath| (0..p.n_steps()).fold(0.0, |u, k| u + sigma * p.get(0, k));
        let fine = endpoint(&path);
        for f in [2, 4, 8, 64] {
            assert!((endpoint(&coarsen(&path, f).unwrap()) - fine).abs() < 1e-14);
        }
    }

    #[test]
    fn sigma_examples() {
        let grid = GridSpec::new(6).unwrap();
        let u = SpeciesField::constant(&[0.0, 0.0], &grid);
        let off = sigma_apply(&NoiseSpec::off(), &u, &[1.0, 1.0]).unwrap();
        assert!(off.values.as_slice().iter().all(|v| *v == 0.0));

        let sq = sigma_apply(&NoiseSpec::diagonal_sqrt(0.001), &u, &[1.0, 1.0]).unwrap();
        assert!(sq.values.as_slice().iter().all(|v| *v == 0.001));
        assert_eq!(sq.clamp_events, 0);

        let lin = sigma_apply(&NoiseSpec::diagonal_linear(0.5), &u, &[1.0, 1.0]).unwrap();
        assert!(lin.values.as_slice().iter().all(|v| *v == 0.0));

        assert!(sigma_apply(&NoiseSpec::diagonal_sqrt(0.1), &u, &[1.0]).is_err());
    }

    #[test]
    fn sqrt_argument_is_clamped() {
        let grid = GridSpec::new(2).unwrap();
        let u = SpeciesField::from_rows(vec![vec![-2.0, 0.0, 3.0]]).unwrap();
        let t = sigma_apply(&NoiseSpec::diagonal_sqrt(1.0), &u, &[1.0]).unwrap();
        assert_eq!(t.clamp_events, 1);
        assert_eq!(t.values.species(0), &[0.0, 1.0, 2.0]);
        assert!(u.check_grid(&grid, "t").is_ok());
    }

    #[test]
    fn modal_noise_uses_cosine_profiles() {
        let grid = GridSpec::new(4).unwrap();
        let u = SpeciesField::constant(&[0.0], &grid);
        let spec = NoiseSpec::diagonal_sqrt(1.0).with_modes(2);
        let t = sigma_apply(&spec, &u, &[0.0, 1.0]).unwrap();
        for j in 0..grid.nodes() {
            let want = std::f64::consts::SQRT_2 * (std::f64::consts::PI * grid.x(j)).cos();
            assert!((t.values.get(0, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::diagonal_sqrt(-1.0).validate().is_err());
        assert!(NoiseSpec::off().with_modes(0).validate().is_err());
        assert!(NoiseSpec::diagonal_linear(0.0).is_off());
        assert!(sample_path(1, 3, 0.0, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn linear_sigma_is_lipschitz(
            a in prop::collection::vec(-5.0f64..5.0, 8),
            b in prop::collection::vec(-5.0f64..5.0, 8),
            c in 0.0f64..2.0,
            w in -3.0f64..3.0,
        ) {
            let u = SpeciesField::from_rows(vec![a.clone()]).unwrap();
            let v = SpeciesField::from_rows(vec![b.clone()]).unwrap();
            let spec = NoiseSpec::diagonal_linear(c);
            let su = sigma_apply(&spec, &u, &[w]).unwrap();
            let sv = sigma_apply(&spec, &v, &[w]).unwrap();
            for j in 0..8 {
                let lhs = (su.values.get(0, j) - sv.values.get(0, j)).abs();
                prop_assert!(lhs <= c * w.abs() * (a[j] - b[j]).abs() * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}
