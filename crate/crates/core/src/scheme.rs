//! Semi-implicit Euler–Maruyama step: explicit centred cross-diffusion
//! fluxes, explicit noise, implicit `δ`-Laplacian.
//!
//! ```text
//! u^{k+1} = (I + δΔt A_Δ)^{-1} ( u^k + Δt D(F^k) + σ(u^k) ΔW^k )
//! F_{i,j+1/2} = (u_{i,j+1} + u_{i,j}) / (2Δx) · Σ_ℓ a_iℓ (u_{ℓ,j+1} - u_{ℓ,j})
//! ```
//!
//! `D` is the flux divergence over the node control volumes: `Δx` inside and
//! `Δx/2` at the two boundary nodes, with zero flux through the exterior
//! faces. With the trapezoidal weights this telescopes, so the explicit part
//! adds no mass.

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::{build_neumann_laplacian, factor_semi_implicit, GridSpec, SemiImplicitFactor};
use crate::model::{CoefficientMatrix, ModelParams, SpeciesField};
use crate::noise::{add_noise_term, NoisePath};

/// Uniform time partition `t_k = k Δt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeSpec {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("time.dt", format!("must be positive, got {dt}")));
        }
        Ok(TimeSpec { dt, n_steps })
    }

    /// Partition of `[0, horizon]`; the horizon must be a whole number of steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("time.T", format!("must be positive, got {horizon}")));
        }
        let spec = Self::new(dt, 0)?;
        let steps = (horizon / dt).round();
        if steps < 1.0 || ((steps * dt) - horizon).abs() > 1e-9 * horizon {
            return Err(Error::param(
                "time.dt",
                format!("{dt} does not divide the horizon {horizon}"),
            ));
        }
        Ok(TimeSpec {
            n_steps: steps as usize,
            ..spec
        })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Scratch buffers for one sample; never shared between samples.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    cells: usize,
    n: usize,
    /// `F_{i,j+1/2}`, `n × J`
    flux: Vec<f64>,
    /// right-hand side before the implicit solve, `n × (J+1)`
    rhs: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(n: usize, grid: &GridSpec) -> Self {
        StepWorkspace {
            cells: grid.cells(),
            n,
            flux: vec![0.0; n * grid.cells()],
            rhs: vec![0.0; n * grid.nodes()],
        }
    }

    pub fn flux(&self, species: usize) -> &[f64] {
        &self.flux[species * self.cells..(species + 1) * self.cells]
    }
}

/// Fill `flux` (`n × J`, species-major) with the centred interface fluxes.
fn fill_flux(
    u: &SpeciesField,
    a: &CoefficientMatrix,
    dx: f64,
    clamp_positive_part: bool,
    flux: &mut [f64],
) {
    let n = a.n();
    let cells = u.cells();
    let inv_dx = 1.0 / dx;
    for i in 0..n {
        let ui = u.species(i);
        let fi = &mut flux[i * cells..(i + 1) * cells];
        for (j, f) in fi.iter_mut().enumerate() {
            let mut dp = 0.0;
            for l in 0..n {
                let a_il = a.get(i, l);
                if a_il != 0.0 {
                    dp += a_il * (u.get(l, j + 1) - u.get(l, j));
                }
            }
            let mut avg = 0.5 * (ui[j + 1] + ui[j]);
            if clamp_positive_part && avg < 0.0 {
                avg = 0.0;
            }
            *f = avg * dp * inv_dx;
        }
    }
}

/// Centred fluxes `F_{i,j+1/2}` at the `J` interior faces of each species.
pub fn discrete_flux(
    u: &SpeciesField,
    a: &CoefficientMatrix,
    grid: &GridSpec,
    clamp_positive_part: bool,
) -> Result<Vec<Vec<f64>>> {
    u.check_species(a.n(), "discrete_flux")?;
    u.check_grid(grid, "discrete_flux")?;
    let mut flux = vec![0.0; a.n() * grid.cells()];
    fill_flux(u, a, grid.dx(), clamp_positive_part, &mut flux);
    Ok(flux.chunks(grid.cells()).map(|c| c.to_vec()).collect())
}

/// Immutable pieces of the scheme for one `(params, grid, Δt)`: shared by
/// every sample of an ensemble.
#[derive(Debug, Clone)]
pub struct Scheme {
    params: ModelParams,
    grid: GridSpec,
    factor: SemiImplicitFactor,
}

impl Scheme {
    pub fn new(params: ModelParams, grid: GridSpec, dt: f64) -> Result<Self> {
        let op = build_neumann_laplacian(&grid);
        let factor = factor_semi_implicit(&op, params.delta, dt)?;
        Ok(Scheme {
            params,
            grid,
            factor,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.factor.dt()
    }

    pub fn factor(&self) -> &SemiImplicitFactor {
        &self.factor
    }

    pub fn workspace(&self) -> StepWorkspace {
        StepWorkspace::new(self.params.n(), &self.grid)
    }

    /// Advance `u` by one step into `out`. `step` is only used for error
    /// reporting. Returns the number of clamped square-root arguments.
    pub fn step_into(
        &self,
        u: &SpeciesField,
        dw: &[f64],
        ws: &mut StepWorkspace,
        out: &mut SpeciesField,
        step: usize,
    ) -> Result<usize> {
        em_step_into(u, &self.params, &self.factor, &self.grid, dw, ws, out, step)
    }

    /// Run `time.n_steps` steps from `u0` driven by `path`.
    pub fn run(
        &self,
        u0: &SpeciesField,
        time: &TimeSpec,
        path: &NoisePath,
        record_every: usize,
    ) -> Result<(SpeciesField, DiagnosticsRecord)> {
        u0.check_species(self.params.n(), "run_path")?;
        u0.check_grid(&self.grid, "run_path")?;
        if (time.dt - self.dt()).abs() > 1e-15 * self.dt() {
            return Err(Error::param(
                "time.dt",
                format!("scheme was factored for dt = {}, got {}", self.dt(), time.dt),
            ));
        }
        let noisy = !self.params.noise.is_off();
        if noisy {
            if path.n_steps() != time.n_steps {
                return Err(Error::DimensionMismatch {
                    context: "noise path steps",
                    expected: time.n_steps,
                    actual: path.n_steps(),
                });
            }
            let drivers = self.params.noise.drivers(self.params.n());
            if path.drivers() != drivers {
                return Err(Error::DimensionMismatch {
                    context: "noise path drivers",
                    expected: drivers,
                    actual: path.drivers(),
                });
            }
        }

        let mut record = DiagnosticsRecord::new(self.params.n());
        record.push(0.0, u0, &self.params, &self.grid)?;
        let mut ws = self.workspace();
        let mut cur = u0.clone();
        let mut next = u0.clone();
        let silent = vec![0.0; self.params.noise.drivers(self.params.n())];
        for k in 0..time.n_steps {
            let dw = if noisy { path.step(k) } else { &silent[..] };
            record.clamp_events += self.step_into(&cur, dw, &mut ws, &mut next, k)?;
            std::mem::swap(&mut cur, &mut next);
            let done = k + 1;
            if done == time.n_steps || (record_every > 0 && done % record_every == 0) {
                record.push(time.t(done), &cur, &self.params, &self.grid)?;
            }
        }
        Ok((cur, record))
    }
}

/// One semi-implicit Euler–Maruyama step, writing into `out`.
#[allow(clippy::too_many_arguments)]
pub fn em_step_into(
    u: &SpeciesField,
    params: &ModelParams,
    factor: &SemiImplicitFactor,
    grid: &GridSpec,
    dw: &[f64],
    ws: &mut StepWorkspace,
    out: &mut SpeciesField,
    step: usize,
) -> Result<usize> {
    let n = params.n();
    u.check_species(n, "em_step")?;
    u.check_grid(grid, "em_step")?;
    out.check_species(n, "em_step output")?;
    out.check_grid(grid, "em_step output")?;
    if ws.n != n || ws.cells != grid.cells() {
        return Err(Error::DimensionMismatch {
            context: "step workspace",
            expected: n * grid.cells(),
            actual: ws.n * ws.cells,
        });
    }
    if factor.len() != grid.nodes() {
        return Err(Error::DimensionMismatch {
            context: "semi-implicit factor",
            expected: grid.nodes(),
            actual: factor.len(),
        });
    }

    let cells = grid.cells();
    let nodes = grid.nodes();
    let dt = factor.dt();
    let dx = grid.dx();
    fill_flux(u, &params.a, dx, params.clamp_positive_part, &mut ws.flux);

    let r = dt / dx;
    for i in 0..n {
        let f = &ws.flux[i * cells..(i + 1) * cells];
        let rhs = &mut ws.rhs[i * nodes..(i + 1) * nodes];
        let ui = u.species(i);
        // half control volumes at the boundary nodes, zero exterior flux
        rhs[0] = ui[0] + 2.0 * r * f[0];
        for j in 1..cells {
            rhs[j] = ui[j] + r * (f[j] - f[j - 1]);
        }
        rhs[cells] = ui[cells] - 2.0 * r * f[cells - 1];
    }

    let clamps = if params.noise.is_off() {
        0
    } else {
        add_noise_term(&params.noise, u, dw, &mut ws.rhs)?
    };

    for i in 0..n {
        let rhs = &ws.rhs[i * nodes..(i + 1) * nodes];
        factor.solve_into(rhs, out.species_mut(i))?;
    }

    if let Some(pos) = out.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step,
            species: pos / nodes,
            node: pos % nodes,
        });
    }
    Ok(clamps)
}

/// One step returning a fresh field.
pub fn em_step(
    u: &SpeciesField,
    params: &ModelParams,
    factor: &SemiImplicitFactor,
    grid: &GridSpec,
    dw: &[f64],
    ws: &mut StepWorkspace,
) -> Result<SpeciesField> {
    let mut out = u.clone();
    em_step_into(u, params, factor, grid, dw, ws, &mut out, 0)?;
    Ok(out)
}

/// Integrate from `u0` over `time`, recording diagnostics every
/// `record_every` steps (0 = initial and final only).
pub fn run_path(
    u0: &SpeciesField,
    params: &ModelParams,
    grid: &GridSpec,
    time: &TimeSpec,
    path: &NoisePath,
    record_every: usize,
) -> Result<(SpeciesField, DiagnosticsRecord)> {
    Scheme::new(params.clone(), *grid, time.dt)?.run(u0, time, path, record_every)
}

/// Two-species initial data: `u_1 = 1` on `[0, 1/2]` (closed), `u_2 = 10x²(1/2 - x/3)`.
pub fn initial_data_two_species(grid: &GridSpec) -> SpeciesField {
    SpeciesField::from_fn(2, grid, |i, x| match i {
        0 => {
            if x <= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        _ => 10.0 * x * x * (0.5 - x / 3.0),
    })
}

/// Initial data for `n` species: the two-species profiles for species 0 and
/// 1, and `1 + 0.5 cos((i+1)πx)` for any further species.
pub fn initial_data(n: usize, grid: &GridSpec) -> SpeciesField {
    let base = initial_data_two_species(grid);
    SpeciesField::from_fn(n, grid, |i, x| {
        if i < 2 {
            let j = (x * grid.cells() as f64).round() as usize;
            base.get(i, j)
        } else {
            1.0 + 0.5 * ((i as f64 + 1.0) * std::f64::consts::PI * x).cos()
        }
    })
}
