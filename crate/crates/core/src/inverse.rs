//! Sparse nonnegative scatterer reconstruction by ADMM.
//!
//! Solves
//!
//! ```text
//! minimize  sum_k ||H_k g - f_k||_1 + lambda ||g||_1   subject to g >= 0
//! ```
//!
//! with the splitting `r_k = H_k g - f_k`, `z = g`. Each view's residual
//! block is penalized with `rho`, the consensus block with `n * rho` (`n`
//! views), so stacking `n` copies of one view and scaling `lambda` by `n`
//! reproduces the single-view iterates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::BandedConvolution;
use crate::error::{Error, Result};
use crate::forward::{AnalyticSignal, Envelope, MAX_STEER_DEG};
use crate::model::{BModeImage, ImagingConfig, RFFrame, RasterGeometry, ScatterGrid};
use crate::psf::PsfStack;

/// Regularization weight, either absolute or as a fraction of `lambda_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Absolute(f64),
    Relative(f64),
}

impl std::str::FromStr for Lambda {
    type Err = Error;

    /// `"0.5"` is absolute, `"0.01*max"` relative to `lambda_max`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::param("lambda", format!("cannot parse `{s}` (use <v> or <v>*max)"));
        let s = s.trim();
        if let Some(v) = s.strip_suffix("*max") {
            v.trim().parse().map(Lambda::Relative).map_err(|_| bad())
        } else {
            s.parse().map(Lambda::Absolute).map_err(|_| bad())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmParams {
    pub lambda: Lambda,
    pub rho: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub cg_iters: usize,
    /// Inner CG stops once `||residual|| <= cg_tol * ||rhs||`.
    pub cg_tol: f64,
    /// Envelope-domain solves re-linearize the phase every this many
    /// iterations.
    pub phase_refresh: usize,
    /// Envelope value assigned to `b = 1` when inverting log compression.
    pub envelope_scale: f64,
    /// Integer refinement of the unknown grid relative to the RF raster.
    pub upsample: usize,
    /// Seed of the random grid that supplies the initial RF phase.
    pub init_seed: u64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            lambda: Lambda::Relative(0.01),
            rho: 1.0,
            max_iter: 300,
            tol_primal: 1e-4,
            tol_dual: 1e-4,
            cg_iters: 30,
            cg_tol: 1e-6,
            phase_refresh: 25,
            envelope_scale: 1.0,
            upsample: 1,
            init_seed: 0,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive")))
            }
        };
        match self.lambda {
            Lambda::Absolute(v) | Lambda::Relative(v) => positive("lambda", v)?,
        }
        positive("rho", self.rho)?;
        positive("tol_primal", self.tol_primal)?;
        positive("tol_dual", self.tol_dual)?;
        positive("cg_tol", self.cg_tol)?;
        positive("envelope_scale", self.envelope_scale)?;
        for (name, v) in [
            ("max_iter", self.max_iter),
            ("cg_iters", self.cg_iters),
            ("phase_refresh", self.phase_refresh),
            ("upsample", self.upsample),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// One view's forward operator `H_k`, its adjoint and its observation.
///
/// Unknowns are stored like RF rasters (`[column][row]`) on a lattice
/// `upsample` times finer than the RF raster, sharing its first pixel.
#[derive(Clone, Debug)]
pub struct ViewSystem {
    op: BandedConvolution,
    upsample: usize,
    observation: Vec<f64>,
    rotate_deg: f64,
}

impl ViewSystem {
    /// Operator for one steering angle with a zero observation.
    pub fn new(psf: &PsfStack, config: &ImagingConfig, steer_deg: f64, upsample: usize) -> Result<Self> {
        config.validate()?;
        if upsample == 0 {
            return Err(Error::param("upsample", "must be positive"));
        }
        if steer_deg.abs() > MAX_STEER_DEG {
            return Err(Error::param("steer_deg", format!("|{steer_deg}| exceeds {MAX_STEER_DEG}")));
        }
        let geometry = config.geometry();
        let op = BandedConvolution::new(psf, &geometry, steer_deg)?;
        Ok(ViewSystem {
            op,
            upsample,
            observation: vec![0.0; geometry.len()],
            rotate_deg: 0.0,
        })
    }

    pub fn geometry(&self) -> &RasterGeometry {
        self.op.geometry()
    }

    pub fn steer_deg(&self) -> f64 {
        self.op.steer_deg()
    }

    pub fn rotate_deg(&self) -> f64 {
        self.rotate_deg
    }

    pub fn upsample(&self) -> usize {
        self.upsample
    }

    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn set_observation(&mut self, f: Vec<f64>) -> Result<()> {
        if f.len() != self.geometry().len() {
            return Err(Error::param("observation", "length does not match the raster"));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("observation", "non-finite value"));
        }
        self.observation = f;
        Ok(())
    }

    /// `(rows, cols)` of the unknown grid.
    pub fn unknown_shape(&self) -> (usize, usize) {
        let g = self.geometry();
        let u = self.upsample;
        ((g.samples_per_line - 1) * u + 1, (g.scanlines - 1) * u + 1)
    }

    pub fn unknown_len(&self) -> usize {
        let (r, c) = self.unknown_shape();
        r * c
    }

    /// `H g`: unknown to RF raster.
    pub fn forward(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.unknown_len());
        if self.upsample == 1 {
            return self.op.apply(g);
        }
        self.op.apply(&self.restrict(g))
    }

    /// `H^T r`: RF raster to unknown.
    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.geometry().len());
        let coarse = self.op.adjoint(r);
        if self.upsample == 1 {
            return coarse;
        }
        self.prolong(&coarse)
    }

    /// Bilinear splat of the fine lattice onto the RF raster.
    fn restrict(&self, g: &[f64]) -> Vec<f64> {
        let geo = self.geometry();
        let (rows, cols) = self.unknown_shape();
        let u = self.upsample;
        let spl = geo.samples_per_line;
        let mut out = vec![0.0; geo.len()];
        for c in 0..cols {
            let (i, fi) = (c / u, (c % u) as f64 / u as f64);
            for r in 0..rows {
                let v = g[c * rows + r];
                if v == 0.0 {
                    continue;
                }
                let (j, fj) = (r / u, (r % u) as f64 / u as f64);
                out[i * spl + j] += v * (1.0 - fi) * (1.0 - fj);
                if fj > 0.0 {
                    out[i * spl + j + 1] += v * (1.0 - fi) * fj;
                }
                if fi > 0.0 {
                    out[(i + 1) * spl + j] += v * fi * (1.0 - fj);
                    if fj > 0.0 {
                        out[(i + 1) * spl + j + 1] += v * fi * fj;
                    }
                }
            }
        }
        out
    }

    /// Transpose of [`Self::restrict`].
    fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        let geo = self.geometry();
        let (rows, cols) = self.unknown_shape();
        let u = self.upsample;
        let spl = geo.samples_per_line;
        let mut out = vec![0.0; rows * cols];
        for c in 0..cols {
            let (i, fi) = (c / u, (c % u) as f64 / u as f64);
            for r in 0..rows {
                let (j, fj) = (r / u, (r % u) as f64 / u as f64);
                let mut v = coarse[i * spl + j] * (1.0 - fi) * (1.0 - fj);
                if fj > 0.0 {
                    v += coarse[i * spl + j + 1] * (1.0 - fi) * fj;
                }
                if fi > 0.0 {
                    v += coarse[(i + 1) * spl + j] * fi * (1.0 - fj);
                    if fj > 0.0 {
                        v += coarse[(i + 1) * spl + j + 1] * fi * fj;
                    }
                }
                out[c * rows + r] = v;
            }
        }
        out
    }

    /// Unknown vector as a grid (rows = depth), clamped to `[0, 1]`, with the
    /// clipped fraction.
    pub fn to_grid(&self, g: &[f64]) -> (ScatterGrid, f64) {
        let geo = self.geometry();
        let (rows, cols) = self.unknown_shape();
        let u = self.upsample as f64;
        let mut values = vec![0.0f32; rows * cols];
        let mut clipped = 0usize;
        for c in 0..cols {
            for r in 0..rows {
                let v = g[c * rows + r];
                if !(0.0..=1.0).contains(&v) {
                    clipped += 1;
                }
                values[r * cols + c] = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 };
            }
        }
        let grid = ScatterGrid::new(
            rows,
            cols,
            geo.dz_mm() / u,
            geo.pitch_mm / u,
            geo.x0_mm(),
            0.0,
            values,
        )
        .expect("lattice derived from a valid raster");
        (grid, clipped as f64 / g.len().max(1) as f64)
    }

    /// Grid values in unknown order; the grid must sit on this lattice.
    pub fn from_grid(&self, grid: &ScatterGrid) -> Result<Vec<f64>> {
        let (rows, cols) = self.unknown_shape();
        let (expect, _) = self.to_grid(&vec![0.0; rows * cols]);
        let tol = 1e-9;
        if grid.rows() != rows
            || grid.cols() != cols
            || (grid.dz_mm() - expect.dz_mm()).abs() > tol
            || (grid.dx_mm() - expect.dx_mm()).abs() > tol
            || (grid.origin_x_mm() - expect.origin_x_mm()).abs() > tol
            || grid.origin_z_mm().abs() > tol
        {
            return Err(Error::param("grid", "does not match the reconstruction lattice"));
        }
        let mut out = vec![0.0; rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                out[c * rows + r] = grid.get(r, c) as f64;
            }
        }
        Ok(out)
    }
}

/// The view system for an observed RF frame (noise-free operator at the
/// frame's steering angle).
pub fn build_view_system(
    psf: &PsfStack,
    config: &ImagingConfig,
    steer_deg: f64,
    observation: &RFFrame,
    upsample: usize,
) -> Result<ViewSystem> {
    if observation.geometry() != &config.geometry() {
        return Err(Error::param("observation", "raster geometry differs from the configuration"));
    }
    if observation.rotate_deg() != 0.0 {
        return Err(Error::param(
            "observation",
            "rotated views cannot be modeled by a view-aligned grid operator",
        ));
    }
    let mut sys = ViewSystem::new(psf, config, steer_deg, upsample)?;
    sys.set_observation(observation.values().to_vec())?;
    Ok(sys)
}

/// One row of the convergence log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<IterRecord>,
    pub converged: bool,
    /// The `lambda` actually used.
    pub lambda: f64,
    /// Fraction of unknowns clipped into `[0, 1]` at export.
    pub clipped_fraction: f64,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,objective,primal_residual,dual_residual\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.iteration, r.objective, r.primal_residual, r.dual_residual
            ));
        }
        s
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }
}

/// Reconstruction result before export.
#[derive(Clone, Debug)]
pub struct Solution {
    /// Consensus iterate `z` (nonnegative, unclamped), in unknown order.
    pub values: Vec<f64>,
    pub grid: ScatterGrid,
    pub report: ConvergenceReport,
}

/// `F(g) = sum_k ||H_k g - f_k||_1 + lambda ||g||_1`.
pub fn objective(views: &[ViewSystem], lambda: f64, g: &[f64]) -> f64 {
    let data: f64 = views
        .iter()
        .map(|v| {
            v.forward(g)
                .iter()
                .zip(v.observation())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum();
    data + lambda * g.iter().map(|v| v.abs()).sum::<f64>()
}

/// `max_j (sum_k H_k^T sign(f_k))_j`, clamped at 0. For any `lambda` at or
/// above this value, `g = 0` satisfies the optimality conditions.
pub fn lambda_max(views: &[ViewSystem]) -> f64 {
    let mut acc = vec![0.0; views.first().map_or(0, |v| v.unknown_len())];
    for v in views {
        let s: Vec<f64> = v
            .observation()
            .iter()
            .map(|&f| if f > 0.0 { 1.0 } else if f < 0.0 { -1.0 } else { 0.0 })
            .collect();
        add_into(&mut acc, &v.adjoint(&s));
    }
    acc.into_iter().fold(0.0, f64::max)
}

fn check_views(views: &[ViewSystem]) -> Result<()> {
    let first = views
        .first()
        .ok_or_else(|| Error::param("views", "at least one view is required"))?;
    if views.iter().any(|v| v.unknown_shape() != first.unknown_shape()) {
        return Err(Error::param("views", "views disagree on the unknown dimensions"));
    }
    Ok(())
}

fn resolve_lambda(spec: Lambda, views: &[ViewSystem]) -> f64 {
    match spec {
        Lambda::Absolute(v) => v,
        Lambda::Relative(frac) => frac * lambda_max(views),
    }
}

/// Runs ADMM on the RF-domain problem. The exported grid is `z` clamped to
/// `[0, 1]`.
pub fn scatrec(views: &[ViewSystem], params: &AdmmParams) -> Result<(ScatterGrid, ConvergenceReport)> {
    let s = solve(views, params)?;
    Ok((s.grid, s.report))
}

/// [`scatrec`] keeping the raw consensus iterate.
pub fn solve(views: &[ViewSystem], params: &AdmmParams) -> Result<Solution> {
    params.validate()?;
    check_views(views)?;
    let lambda = resolve_lambda(params.lambda, views);
    let mut state = Admm::new(views, lambda, params.rho);
    let mut records = Vec::new();
    let converged = state.run(views, params, params.max_iter, &mut records)?;
    finish(views, state, lambda, converged, records)
}

fn finish(
    views: &[ViewSystem],
    state: Admm,
    lambda: f64,
    converged: bool,
    records: Vec<IterRecord>,
) -> Result<Solution> {
    let (grid, clipped_fraction) = views[0].to_grid(&state.z);
    Ok(Solution {
        values: state.z,
        grid,
        report: ConvergenceReport {
            records,
            converged,
            lambda,
            clipped_fraction,
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Scaled-form ADMM state. `ht_*` cache `sum_k H_k^T (.)_k`.
struct Admm {
    lambda: f64,
    rho: f64,
    g: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    r: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    ht_f: Vec<f64>,
    ht_r: Vec<f64>,
    ht_u: Vec<f64>,
    iteration: usize,
}

impl Admm {
    fn new(views: &[ViewSystem], lambda: f64, rho: f64) -> Self {
        let n = views[0].unknown_len();
        let m = views[0].geometry().len();
        let mut state = Admm {
            lambda,
            rho,
            g: vec![0.0; n],
            z: vec![0.0; n],
            w: vec![0.0; n],
            r: vec![vec![0.0; m]; views.len()],
            u: vec![vec![0.0; m]; views.len()],
            ht_f: vec![0.0; n],
            ht_r: vec![0.0; n],
            ht_u: vec![0.0; n],
            iteration: 0,
        };
        state.refresh_targets(views);
        state
    }

    /// Recomputes the cached `sum_k H_k^T f_k` after observations change.
    fn refresh_targets(&mut self, views: &[ViewSystem]) {
        self.ht_f.iter_mut().for_each(|v| *v = 0.0);
        for v in views {
            add_into(&mut self.ht_f, &v.adjoint(v.observation()));
        }
    }

    fn normal_apply(views: &[ViewSystem], x: &[f64]) -> Vec<f64> {
        let nv = views.len() as f64;
        let mut out: Vec<f64> = x.iter().map(|v| nv * v).collect();
        for v in views {
            add_into(&mut out, &v.adjoint(&v.forward(x)));
        }
        out
    }

    /// Warm-started CG on `(sum_k H_k^T H_k + n I) g = rhs`.
    fn cg(&mut self, views: &[ViewSystem], rhs: &[f64], params: &AdmmParams) -> Result<()> {
        let b_norm = norm(rhs);
        if b_norm == 0.0 {
            self.g.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let target = params.cg_tol * b_norm;
        let ax = Self::normal_apply(views, &self.g);
        let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut rs = dot(&res, &res);
        if rs.sqrt() <= target {
            return Ok(());
        }
        let mut p = res.clone();
        for _ in 0..params.cg_iters {
            let ap = Self::normal_apply(views, &p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0 && pap.is_finite()) {
                return Err(Error::Numerical(format!(
                    "CG breakdown at ADMM iteration {}: p^T A p = {pap}",
                    self.iteration
                )));
            }
            let alpha = rs / pap;
            self.g.iter_mut().zip(&p).for_each(|(g, p)| *g += alpha * p);
            res.iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
            let rs_new = dot(&res, &res);
            if rs_new.sqrt() <= target {
                break;
            }
            let beta = rs_new / rs;
            p.iter_mut().zip(&res).for_each(|(p, r)| *p = r + beta * *p);
            rs = rs_new;
        }
        Ok(())
    }

    /// Runs up to `iters` iterations; true when the residual tolerances were
    /// met.
    fn run(
        &mut self,
        views: &[ViewSystem],
        params: &AdmmParams,
        iters: usize,
        records: &mut Vec<IterRecord>,
    ) -> Result<bool> {
        let nv = views.len() as f64;
        let rho = self.rho;
        let shrink = self.lambda / (nv * rho);
        for _ in 0..iters {
            self.iteration += 1;
            // g-update.
            let rhs: Vec<f64> = (0..self.g.len())
                .map(|j| self.ht_f[j] + self.ht_r[j] - self.ht_u[j] + nv * (self.z[j] - self.w[j]))
                .collect();
            self.cg(views, &rhs, params)?;

            // r- and dual updates per view.
            let mut primal_sq = 0.0;
            let mut hg_sq = 0.0;
            let mut rf_sq = 0.0;
            let mut ht_r_new = vec![0.0; self.g.len()];
            let mut ht_hg = vec![0.0; self.g.len()];
            for (k, v) in views.iter().enumerate() {
                let hg = v.forward(&self.g);
                let f = v.observation();
                let (r, u) = (&mut self.r[k], &mut self.u[k]);
                for i in 0..hg.len() {
                    r[i] = soft(hg[i] - f[i] + u[i], 1.0 / rho);
                    let p = hg[i] - f[i] - r[i];
                    u[i] += p;
                    primal_sq += p * p;
                    hg_sq += hg[i] * hg[i];
                    rf_sq += (r[i] + f[i]) * (r[i] + f[i]);
                }
                add_into(&mut ht_r_new, &v.adjoint(r));
                add_into(&mut ht_hg, &v.adjoint(&hg));
            }

            // z-update: shrink, then project onto g >= 0.
            let mut dz_sq = 0.0;
            let mut z_sq = 0.0;
            let mut g_sq = 0.0;
            let mut dual = vec![0.0; self.g.len()];
            for j in 0..self.g.len() {
                let z_new = (self.g[j] + self.w[j] - shrink).max(0.0);
                let p = self.g[j] - z_new;
                self.w[j] += p;
                primal_sq += nv * p * p;
                dual[j] = rho * ((ht_r_new[j] - self.ht_r[j]) + nv * (z_new - self.z[j]));
                dz_sq += dual[j] * dual[j];
                z_sq += nv * z_new * z_new;
                g_sq += nv * self.g[j] * self.g[j];
                self.z[j] = z_new;
            }
            // sum_k H_k^T u_k after the dual step: u += Hg - f - r.
            for j in 0..self.g.len() {
                self.ht_u[j] += ht_hg[j] - self.ht_f[j] - ht_r_new[j];
            }
            self.ht_r = ht_r_new;

            let primal = primal_sq.sqrt();
            let dual_res = dz_sq.sqrt();
            let obj = objective(views, self.lambda, &self.z);
            if !(obj.is_finite() && primal.is_finite() && dual_res.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite iterate at ADMM iteration {}",
                    self.iteration
                )));
            }
            records.push(IterRecord {
                iteration: self.iteration,
                objective: obj,
                primal_residual: primal,
                dual_residual: dual_res,
            });

            let f_sq: f64 = views.iter().map(|v| dot(v.observation(), v.observation())).sum();
            let eps_pri = params.tol_primal * (hg_sq + g_sq).sqrt().max((rf_sq + z_sq).sqrt()).max(f_sq.sqrt());
            let aty: Vec<f64> = (0..self.g.len())
                .map(|j| rho * (self.ht_u[j] + nv * self.w[j]))
                .collect();
            let eps_dual = params.tol_dual * norm(&aty);
            if primal <= eps_pri && dual_res <= eps_dual {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Inverts log compression: `env = scale * 10^(dr (b - 1) / 20)`.
pub fn demodulate_to_rf(bmode: &BModeImage, envelope_scale: f64) -> Result<Envelope> {
    if !(envelope_scale > 0.0 && envelope_scale.is_finite()) {
        return Err(Error::param("envelope_scale", "must be positive"));
    }
    let dr = bmode.dynamic_range_db();
    Ok(Envelope {
        geometry: *bmode.geometry(),
        steer_deg: bmode.steer_deg(),
        rotate_deg: bmode.rotate_deg(),
        values: bmode
            .values()
            .iter()
            .map(|&b| envelope_scale * 10f64.powf(dr * (b - 1.0) / 20.0))
            .collect(),
    })
}

/// RF target with the envelope `env` and the phase of `y` per scanline:
/// `env * y / |analytic(y)|`.
fn phase_target(geometry: &RasterGeometry, env: &[f64], y: &[f64], hilbert: &AnalyticSignal) -> Vec<f64> {
    let spl = geometry.samples_per_line;
    let mut out = vec![0.0; y.len()];
    for i in 0..geometry.scanlines {
        let line = &y[i * spl..(i + 1) * spl];
        let a = hilbert.compute(line);
        for j in 0..spl {
            let mag = a[j].norm();
            if mag > 0.0 {
                out[i * spl + j] = env[i * spl + j] * line[j] / mag;
            }
        }
    }
    out
}

/// Envelope-domain reconstruction from B-mode views (steering taken from
/// each image). The RF phase is unknown, so the data term is linearized
/// around the current iterate: targets keep the observed envelope and take
/// the phase of `H_k z`, refreshed every `phase_refresh` iterations.
/// Absolute `lambda` is multiplied by the number of views.
pub fn reconstruct_from_bmode(
    bmodes: &[BModeImage],
    psf: &PsfStack,
    config: &ImagingConfig,
    params: &AdmmParams,
) -> Result<Solution> {
    params.validate()?;
    if bmodes.is_empty() {
        return Err(Error::param("bmodes", "at least one view is required"));
    }
    let geometry = config.geometry();
    let mut views = Vec::with_capacity(bmodes.len());
    let mut envs = Vec::with_capacity(bmodes.len());
    for b in bmodes {
        if b.geometry() != &geometry {
            return Err(Error::param("bmodes", "B-mode raster differs from the configuration"));
        }
        if b.rotate_deg() != 0.0 {
            return Err(Error::param(
                "bmodes",
                "rotated views cannot be modeled by a view-aligned grid operator",
            ));
        }
        views.push(ViewSystem::new(psf, config, b.steer_deg(), params.upsample)?);
        envs.push(demodulate_to_rf(b, params.envelope_scale)?.values);
    }
    let hilbert = AnalyticSignal::new(geometry.samples_per_line);

    let mut rng = ChaCha8Rng::seed_from_u64(params.init_seed);
    let init: Vec<f64> = (0..views[0].unknown_len()).map(|_| rng.random::<f64>()).collect();
    for (v, env) in views.iter_mut().zip(&envs) {
        let y = v.forward(&init);
        let t = phase_target(&geometry, env, &y, &hilbert);
        v.set_observation(t)?;
    }
    let lambda = match params.lambda {
        Lambda::Absolute(l) => l * views.len() as f64,
        Lambda::Relative(frac) => frac * lambda_max(&views),
    };

    let mut state = Admm::new(&views, lambda, params.rho);
    let mut records = Vec::new();
    let mut converged = false;
    while records.len() < params.max_iter {
        let block = params.phase_refresh.min(params.max_iter - records.len());
        let inner = state.run(&views, params, block, &mut records)?;
        let mut change_sq = 0.0;
        let mut total_sq = 0.0;
        for (v, env) in views.iter_mut().zip(&envs) {
            let y = v.forward(&state.z);
            let t = phase_target(&geometry, env, &y, &hilbert);
            change_sq += t.iter().zip(v.observation()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            total_sq += dot(&t, &t);
            v.set_observation(t)?;
        }
        state.refresh_targets(&views);
        if inner && change_sq.sqrt() <= params.tol_primal * total_sq.sqrt().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    finish(&views, state, lambda, converged, records)
}
