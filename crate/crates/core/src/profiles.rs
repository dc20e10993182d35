//! Forward synthesis of concentrating sequences, heuristic profile
//! extraction, and verification of the norm-splitting statements,
//! including the dyadic-scaling variant for the critical exponent.
//!
//! The forward model builds `u_k = sum_n g_k^{(n)} v^{(n)} + rho_k` where
//! `g_k^{(n)}` is a magnetic shift (or a dyadic rescaling in critical
//! mode) along the frame, and `rho_k` is smooth noise that vanishes with
//! `k`. Extraction inverts the model: it repeatedly locates the dominant
//! concentration center of the remainder on the lattice, averages the
//! inverse-shifted tail as the profile estimate, and subtracts it.

use crate::energy::{energy_ea, LinkPhases, LinkRule};
use crate::gauge::{
    inverse_shift, magnetic_shift, poincare_phase, AnyPotential, ElectricPotential, FieldStrength,
    GaugePhase, Quadrature,
};
use crate::grid::{ComplexField, DiscretizationSpec, GridError, GridSpec, RealField};
use crate::infinity::translated_corrected;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gauge(#[from] crate::gauge::GaugeError),
    #[error("invalid frame: {0}")]
    BadFrame(String),
    #[error("profile supports collide inside the box at the final index: {0}")]
    SupportCollision(String),
    #[error("remainder mass did not decrease (profile model violated) at extraction step {0}")]
    StalledExtraction(usize),
}

/// Per-profile shift (and, in critical mode, scale) sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftFrame {
    /// shifts[n][k] = y_k^{(n)}
    pub shifts: Vec<Vec<[f64; 3]>>,
    /// critical mode: scales[n][k] = j_k^{(n)}
    pub scales: Option<Vec<Vec<i32>>>,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl ShiftFrame {
    /// Validated frame for synthesis: profile 0 is stationary and the
    /// pairwise separations at the final index reach the threshold. In
    /// critical mode the combined scale-shift separation is used.
    pub fn new(
        shifts: Vec<Vec<[f64; 3]>>,
        scales: Option<Vec<Vec<i32>>>,
        separation_threshold: f64,
    ) -> Result<Self, ProfileError> {
        if shifts.is_empty() || shifts[0].is_empty() {
            return Err(ProfileError::BadFrame("empty frame".into()));
        }
        let k_len = shifts[0].len();
        if shifts.iter().any(|s| s.len() != k_len) {
            return Err(ProfileError::BadFrame("ragged shift sequences".into()));
        }
        if shifts[0].iter().any(|y| *y != [0.0; 3]) {
            return Err(ProfileError::BadFrame(
                "profile 0 must be stationary (y = 0)".into(),
            ));
        }
        if let Some(sc) = &scales {
            if sc.len() != shifts.len() || sc.iter().any(|s| s.len() != k_len) {
                return Err(ProfileError::BadFrame("ragged scale sequences".into()));
            }
            if sc[0].iter().any(|&j| j != 0) {
                return Err(ProfileError::BadFrame(
                    "profile 0 must have scale 0".into(),
                ));
            }
        }
        let frame = ShiftFrame { shifts, scales };
        for m in 0..frame.shifts.len() {
            for n in (m + 1)..frame.shifts.len() {
                let sep = frame.separation_at_final(m, n);
                if sep < separation_threshold {
                    return Err(ProfileError::BadFrame(format!(
                        "profiles {m} and {n} separate only by {sep} at the final index \
                         (threshold {separation_threshold})"
                    )));
                }
            }
        }
        Ok(frame)
    }

    /// Frame without invariants, used for extraction output.
    pub fn unchecked(shifts: Vec<Vec<[f64; 3]>>) -> Self {
        ShiftFrame {
            shifts,
            scales: None,
        }
    }

    pub fn len_k(&self) -> usize {
        self.shifts[0].len()
    }

    pub fn num_profiles(&self) -> usize {
        self.shifts.len()
    }

    /// Separation of profiles `m` and `n` at the final index; in critical
    /// mode `|j_m - j_n| + (2^{j_m} + 2^{j_n}) |y_m - y_n|`.
    pub fn separation_at_final(&self, m: usize, n: usize) -> f64 {
        let k = self.len_k() - 1;
        let d = dist(&self.shifts[m][k], &self.shifts[n][k]);
        match &self.scales {
            None => d,
            Some(sc) => {
                let (jm, jn) = (sc[m][k], sc[n][k]);
                ((jm - jn).abs() as f64) + (2f64.powi(jm) + 2f64.powi(jn)) * d
            }
        }
    }
}

/// Cubic (Catmull-Rom) interpolation of `u` at an arbitrary physical
/// point, zero outside the node hull. Third-order accuracy keeps the
/// dyadic rescalings faithful at moderate scale separations.
pub fn sample_interpolated(u: &ComplexField, point: &[f64; 3]) -> Complex64 {
    let grid = u.grid();
    let h = grid.spacing();
    let l = grid.half_width();
    let dim = grid.dim();
    let m = grid.points_per_axis() as i64;
    let mut base = [0i64; 3];
    let mut w_ax = [[0.0f64; 4]; 3];
    for ax in 0..3 {
        if ax >= dim {
            w_ax[ax] = [0.0, 1.0, 0.0, 0.0];
            continue;
        }
        let t = (point[ax] + l) / h;
        if t < 0.0 || t > (m - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        let f = t.floor().min((m - 2) as f64);
        let s = t - f;
        base[ax] = f as i64;
        let (s2, s3) = (s * s, s * s * s);
        w_ax[ax] = [
            0.5 * (-s3 + 2.0 * s2 - s),
            0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
            0.5 * (-3.0 * s3 + 4.0 * s2 + s),
            0.5 * (s3 - s2),
        ];
    }
    let taps = 4usize.pow(dim as u32);
    let mut acc = Complex64::new(0.0, 0.0);
    for c in 0..taps {
        let mut mi = [0usize; 3];
        let mut w = 1.0;
        let mut cc = c;
        for ax in 0..dim {
            let off = (cc % 4) as i64 - 1;
            cc /= 4;
            // clamp the stencil at the hull; fields decay there anyway
            mi[ax] = (base[ax] + off).clamp(0, m - 1) as usize;
            w *= w_ax[ax][(off + 1) as usize];
        }
        acc += w * u.values()[grid.flat_index(&mi)];
    }
    acc
}

/// The dyadic action `(g u)(x) = 2^{(N-2)j/2} u(2^j (x - y))`, resampled
/// on the same grid. The boolean flags resolution loss: on a compression
/// (`j > 0`) the sampling stride `2^j h` exceeding the RMS width of `u`.
pub fn dyadic_rescale(u: &ComplexField, j: i32, y: &[f64; 3]) -> (ComplexField, bool) {
    let grid = *u.grid();
    if j == 0 && *y == [0.0; 3] {
        return (u.clone(), false);
    }
    let n = grid.dim() as f64;
    let amp = 2f64.powf((n - 2.0) * j as f64 / 2.0);
    let scale = 2f64.powi(j);
    let out = ComplexField::from_fn(grid, |x| {
        let p = [
            scale * (x[0] - y[0]),
            scale * (x[1] - y[1]),
            scale * (x[2] - y[2]),
        ];
        amp * sample_interpolated(u, &p)
    });
    let degraded = j > 0 && scale * grid.spacing() > rms_width(u);
    (out, degraded)
}

/// Mass-weighted RMS radius about the centroid of `|u|^2`.
pub fn rms_width(u: &ComplexField) -> f64 {
    let grid = u.grid();
    let mut mass = 0.0;
    let mut centroid = [0.0; 3];
    for idx in 0..grid.num_nodes() {
        let w = u.values()[idx].norm_sqr();
        let x = grid.node_coord(idx);
        mass += w;
        for ax in 0..3 {
            centroid[ax] += w * x[ax];
        }
    }
    if mass == 0.0 {
        return 0.0;
    }
    for c in centroid.iter_mut() {
        *c /= mass;
    }
    let mut second = 0.0;
    for idx in 0..grid.num_nodes() {
        let w = u.values()[idx].norm_sqr();
        let x = grid.node_coord(idx);
        let mut r2 = 0.0;
        for ax in 0..3 {
            let d = x[ax] - centroid[ax];
            r2 += d * d;
        }
        second += w * r2;
    }
    (second / mass).sqrt()
}

/// Transforms the potential pair consistently with the dyadic action:
/// `A'(x) = 2^{-j} A(2^{-j} x + y)` and `V'(x) = 2^{-2j} V(2^{-j} x + y)`,
/// so that `E_{A}(g u) = E_{A'}(u)` and the electric pairing matches. `V'`
/// is returned sampled on the target grid.
pub fn potential_rescale(
    a: &AnyPotential,
    v: &ElectricPotential,
    j: i32,
    y: [f64; 3],
    grid: &GridSpec,
) -> (AnyPotential, RealField) {
    let a_scaled = AnyPotential::Rescaled {
        inner: Box::new(a.clone()),
        j,
        y,
    };
    let s = 2f64.powi(-j);
    let amp = s * s;
    let v_scaled = RealField::from_fn(*grid, |x| {
        amp * v.eval(&[s * x[0] + y[0], s * x[1] + y[1], s * x[2] + y[2]])
    });
    (a_scaled, v_scaled)
}

/// Smooth seeded noise: a few random Gaussian wavelets, normalized to the
/// requested L^p amplitude.
fn smooth_noise(grid: &GridSpec, p: f64, amplitude: f64, rng: &mut ChaCha8Rng) -> ComplexField {
    if amplitude <= 0.0 {
        return ComplexField::zeros(*grid);
    }
    let l = grid.half_width();
    let bumps: Vec<([f64; 3], f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            let mut c = [0.0; 3];
            for item in c.iter_mut().take(grid.dim()) {
                *item = rng.gen_range(-0.6 * l..0.6 * l);
            }
            let sigma = rng.gen_range(0.15 * l..0.4 * l);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut tilt = [0.0; 3];
            for item in tilt.iter_mut().take(grid.dim()) {
                *item = rng.gen_range(-1.0..1.0);
            }
            (c, sigma, phase, tilt)
        })
        .collect();
    let field = ComplexField::from_fn(*grid, |x| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, sigma, phase, tilt) in &bumps {
            let mut r2 = 0.0;
            let mut ph = *phase;
            for ax in 0..3 {
                let d = x[ax] - c[ax];
                r2 += d * d;
                ph += tilt[ax] * x[ax];
            }
            acc += Complex64::from_polar((-r2 / (2.0 * sigma * sigma)).exp(), ph);
        }
        acc
    });
    let norm = field.lp_norm(p).unwrap_or(0.0);
    if norm == 0.0 {
        return field;
    }
    field.scaled(Complex64::new(amplitude / norm, 0.0))
}

/// Estimated support radius used by the collision check.
fn support_radius(u: &ComplexField) -> f64 {
    1.5 * rms_width(u)
}

/// Builds `u_k = sum_n g_k^{(n)} v^{(n)} + rho_k`. Magnetic shifts use the
/// Poincaré phase of `a` at each frame point; in critical mode (frame
/// carries scales) the dyadic action is applied instead and `a` is
/// ignored. Noise amplitude decays linearly: `noise * (1 - k/K)`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_sequence(
    profiles: &[ComplexField],
    frame: &ShiftFrame,
    a: &AnyPotential,
    quad: &Quadrature,
    p: f64,
    noise: f64,
    seed: u64,
) -> Result<Vec<ComplexField>, ProfileError> {
    if profiles.len() != frame.num_profiles() {
        return Err(ProfileError::BadFrame(format!(
            "{} profiles for a frame of {}",
            profiles.len(),
            frame.num_profiles()
        )));
    }
    let grid = *profiles[0].grid();
    // support collision check at the final index (shift mode only; the
    // dyadic action shrinks supports, which only helps)
    let kf = frame.len_k() - 1;
    let radii: Vec<f64> = profiles.iter().map(support_radius).collect();
    for m in 0..profiles.len() {
        for n in (m + 1)..profiles.len() {
            let jm = frame.scales.as_ref().map(|s| s[m][kf]).unwrap_or(0);
            let jn = frame.scales.as_ref().map(|s| s[n][kf]).unwrap_or(0);
            let rm = radii[m] / 2f64.powi(jm);
            let rn = radii[n] / 2f64.powi(jn);
            let d = dist(&frame.shifts[m][kf], &frame.shifts[n][kf]);
            if d < rm + rn {
                return Err(ProfileError::SupportCollision(format!(
                    "profiles {m} and {n}: distance {d} < {rm} + {rn}"
                )));
            }
        }
    }
    let big_k = frame.len_k();
    let mut out = Vec::with_capacity(big_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..big_k {
        let mut uk = ComplexField::zeros(grid);
        for (n, v) in profiles.iter().enumerate() {
            let y = frame.shifts[n][k];
            let piece = match &frame.scales {
                Some(sc) => dyadic_rescale(v, sc[n][k], &y).0,
                None => {
                    let phase = poincare_phase(a, y, quad)?;
                    magnetic_shift(v, &y, &phase)?
                }
            };
            uk = uk.add(&piece);
        }
        let amp = noise * (1.0 - k as f64 / big_k as f64);
        let rho = smooth_noise(&grid, p, amp, &mut rng);
        out.push(uk.add(&rho));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingReport {
    /// `| ||u_K||_p^p - sum_n ||v_n||_p^p |`
    pub p_mass_defect: f64,
    /// `||u_K||_2^2 + tol - sum_n ||v_n||_2^2` (nonnegative when the
    /// sub-additivity relation holds)
    pub l2_margin: f64,
    /// `E_A(u_K) + tol - sum_n E_{A_inf^{(n)}}(v_n)`
    pub energy_margin: f64,
    /// normalized p-masses `t_n`
    pub t_masses: Vec<f64>,
    pub p_mass_total: f64,
}

#[derive(Debug, Clone)]
pub struct ProfileDecomposition {
    pub profiles: Vec<ComplexField>,
    pub frame: ShiftFrame,
    pub remainders: Vec<ComplexField>,
    /// max window mass of the final remainder over the lattice (the
    /// saturation surrogate)
    pub residual_window_mass: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub p: f64,
    /// tail length for the weak-limit surrogate (default K/4 in
    /// `extract_profiles` when 0)
    pub tail: usize,
    pub max_profiles: usize,
    /// magnetic data for the shift action; `None` means plain translation
    pub potential: Option<(AnyPotential, Quadrature)>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            p: 3.0,
            tail: 0,
            max_profiles: 8,
            potential: None,
        }
    }
}

fn shift_phase(
    opts: &ExtractOptions,
    y: [f64; 3],
) -> Result<Option<GaugePhase>, ProfileError> {
    match &opts.potential {
        None => Ok(None),
        Some((a, quad)) => Ok(Some(poincare_phase(a, y, quad)?)),
    }
}

fn apply_shift(
    u: &ComplexField,
    y: [f64; 3],
    phase: &Option<GaugePhase>,
) -> Result<ComplexField, ProfileError> {
    match phase {
        None => Ok(u.translate(&y)?),
        Some(ph) => Ok(magnetic_shift(u, &y, ph)?),
    }
}

fn apply_inverse_shift(
    u: &ComplexField,
    y: [f64; 3],
    phase: &Option<GaugePhase>,
) -> Result<ComplexField, ProfileError> {
    match phase {
        None => Ok(u.translate(&[-y[0], -y[1], -y[2]])?),
        Some(ph) => Ok(inverse_shift(u, &y, ph)?),
    }
}

/// Iterative extraction of concentration profiles from a sequence.
///
/// Each round: locate the lattice point maximizing the window `p`-mass of
/// the final remainder; track the per-`k` concentration centers; average
/// the inverse-shifted tail as the profile; subtract its shifted copies
/// from every remainder. Stops when the window mass falls below `delta`,
/// aborts (flag) when it fails to decrease.
pub fn extract_profiles(
    sequence: &[ComplexField],
    xi: &DiscretizationSpec,
    delta: f64,
    opts: &ExtractOptions,
) -> Result<ProfileDecomposition, ProfileError> {
    if sequence.is_empty() {
        return Err(ProfileError::BadFrame("empty sequence".into()));
    }
    let grid = *sequence[0].grid();
    let centers = xi.points_in_box(&grid);
    let big_k = sequence.len();
    let tail = if opts.tail == 0 {
        (big_k / 4).max(1)
    } else {
        opts.tail.min(big_k)
    };
    let p = opts.p;
    let rho = xi.covering_radius;

    let window_peak = |f: &ComplexField| -> Result<([f64; 3], f64), ProfileError> {
        let mut best = ([0.0; 3], f64::NEG_INFINITY);
        for c in &centers {
            let m = f.window_mass(c, rho, p)?;
            if m > best.1 {
                best = (*c, m);
            }
        }
        Ok(best)
    };

    let mut remainders: Vec<ComplexField> = sequence.to_vec();
    let mut profiles = Vec::new();
    let mut frames: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut aborted = false;
    let (_, mut prev_mass) = window_peak(&remainders[big_k - 1])?;

    for step in 0..opts.max_profiles {
        let (_, peak_mass) = window_peak(&remainders[big_k - 1])?;
        if peak_mass < delta {
            break;
        }
        if step > 0 && peak_mass >= prev_mass {
            // the model did not explain the mass it claimed; stop rather
            // than loop on a violated assumption
            aborted = true;
            let _ = ProfileError::StalledExtraction(step);
            break;
        }
        prev_mass = peak_mass;

        // per-k concentration track of the current dominant profile
        let mut track = Vec::with_capacity(big_k);
        for r in &remainders {
            let (y, _) = window_peak(r)?;
            track.push(y);
        }
        // weak-limit surrogate: average of the inverse-shifted tail
        let mut avg = ComplexField::zeros(grid);
        for k in (big_k - tail)..big_k {
            let phase = shift_phase(opts, track[k])?;
            let back = apply_inverse_shift(&remainders[k], track[k], &phase)?;
            avg = avg.add(&back);
        }
        let mut profile = avg.scaled(Complex64::new(1.0 / tail as f64, 0.0));
        // localize: other profiles have escaped only in the limit, so on a
        // finite tail their residue is cut off away from the center
        let inner = 2.0 * rho;
        let outer = 3.0 * rho;
        {
            let vals = profile.values_mut();
            for idx in 0..grid.num_nodes() {
                let x = grid.node_coord(idx);
                let mut r2 = 0.0;
                for ax in 0..grid.dim() {
                    r2 += x[ax] * x[ax];
                }
                let r = r2.sqrt();
                if r >= outer {
                    vals[idx] = Complex64::new(0.0, 0.0);
                } else if r > inner {
                    let t = (r - inner) / (outer - inner);
                    let w = (0.5 * std::f64::consts::PI * t).cos();
                    vals[idx] *= w * w;
                }
            }
        }
        // subtract the shifted profile from every remainder
        for (k, r) in remainders.iter_mut().enumerate() {
            let phase = shift_phase(opts, track[k])?;
            let shifted = apply_shift(&profile, track[k], &phase)?;
            *r = r.sub(&shifted);
        }
        profiles.push(profile);
        frames.push(track);
    }

    let (_, residual_window_mass) = window_peak(&remainders[big_k - 1])?;
    Ok(ProfileDecomposition {
        profiles,
        frame: ShiftFrame::unchecked(frames),
        remainders,
        residual_window_mass,
        aborted,
    })
}

/// Checks the norm-splitting relations of a decomposition against the
/// final element of the original sequence.
pub fn verify_splitting(
    dec: &ProfileDecomposition,
    sequence: &[ComplexField],
    p: f64,
    field: &FieldStrength,
    a: &AnyPotential,
    quad: &Quadrature,
    rule: LinkRule,
) -> Result<SplittingReport, ProfileError> {
    let u_last = sequence
        .last()
        .ok_or_else(|| ProfileError::BadFrame("empty sequence".into()))?;
    let grid = u_last.grid();
    let total_p = u_last.lp_norm(p)?.powf(p);
    let mut sum_p = 0.0;
    let mut sum_l2 = 0.0;
    let mut sum_energy = 0.0;
    let mut t_masses = Vec::new();
    for (n, v) in dec.profiles.iter().enumerate() {
        let mass = v.lp_norm(p)?.powf(p);
        sum_p += mass;
        t_masses.push(if total_p > 0.0 { mass / total_p } else { 0.0 });
        sum_l2 += v.l2_norm().powi(2);
        // limit potential along this profile's track
        let y_final = dec.frame.shifts[n].last().copied().unwrap_or([0.0; 3]);
        let a_inf = if y_final == [0.0; 3] {
            a.clone()
        } else {
            translated_corrected(field, y_final, quad)
        };
        let links = LinkPhases::build(&a_inf, grid, rule);
        sum_energy += energy_ea(v, &links);
    }
    let links_a = LinkPhases::build(a, grid, rule);
    let e_total = energy_ea(u_last, &links_a);
    let tol = 1e-9 * (1.0 + e_total.abs());
    Ok(SplittingReport {
        p_mass_defect: (total_p - sum_p).abs(),
        l2_margin: u_last.l2_norm().powi(2) + tol - sum_l2,
        energy_margin: e_total + tol - sum_energy,
        t_masses,
        p_mass_total: total_p,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrezisLiebReport {
    /// `| ||u_K||_{2*}^{2*} - sum_n ||w_n||_{2*}^{2*} |` relative to the total
    pub critical_mass_defect: f64,
    /// same for the electric pairing with the rescaled potentials
    pub electric_defect: f64,
}

/// Critical-mode mass bookkeeping: the `2*`-masses of the rescaled
/// profiles add up to the sequence mass, and the electric terms add up
/// with each profile weighted by its own rescaled potential.
pub fn brezis_lieb_check(
    sequence: &[ComplexField],
    dec_profiles: &[ComplexField],
    frame: &ShiftFrame,
    a: &AnyPotential,
    v: &ElectricPotential,
) -> Result<BrezisLiebReport, ProfileError> {
    let u_last = sequence
        .last()
        .ok_or_else(|| ProfileError::BadFrame("empty sequence".into()))?;
    let grid = *u_last.grid();
    let n = grid.dim();
    if n < 3 {
        return Err(ProfileError::BadFrame(
            "critical mode needs at least three dimensions".into(),
        ));
    }
    let pstar = 2.0 * n as f64 / (n as f64 - 2.0);
    let kf = frame.len_k() - 1;

    let total = u_last.lp_norm(pstar)?.powf(pstar);
    let mut sum = 0.0;
    for w in dec_profiles {
        sum += w.lp_norm(pstar)?.powf(pstar);
    }
    let critical_mass_defect = (total - sum).abs() / total.max(1e-300);

    // electric side: int V |u_K|^2 vs sum_n int V^{(n)} |w_n|^2
    let v_grid = v.sample(&grid);
    let vol = grid.cell_volume();
    let mut elec_total = 0.0;
    for (z, w) in u_last.values().iter().zip(v_grid.values()) {
        elec_total += w * z.norm_sqr();
    }
    elec_total *= vol;
    let mut elec_sum = 0.0;
    for (nn, w) in dec_profiles.iter().enumerate() {
        let j = frame.scales.as_ref().map(|s| s[nn][kf]).unwrap_or(0);
        let y = frame.shifts[nn][kf];
        let (_, v_scaled) = potential_rescale(a, v, j, y, &grid);
        for (z, vv) in w.values().iter().zip(v_scaled.values()) {
            elec_sum += vv * z.norm_sqr();
        }
    }
    elec_sum *= vol;
    let scale = elec_total.abs().max(1e-12);
    Ok(BrezisLiebReport {
        critical_mass_defect,
        electric_defect: (elec_total - elec_sum).abs() / scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{curl, MagneticPotential};
    use num_complex::Complex64 as C;

    fn gaussian(grid: GridSpec, center: [f64; 3], sigma: f64, amp: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            let mut r2 = 0.0;
            for ax in 0..3 {
                let d = x[ax] - center[ax];
                r2 += d * d;
            }
            C::new(amp * (-r2 / (2.0 * sigma * sigma)).exp(), 0.0)
        })
    }

    fn quad() -> Quadrature {
        Quadrature::gauss_legendre(16)
    }

    #[test]
    fn frame_validation() {
        // profile 0 must be stationary
        let bad = ShiftFrame::new(
            vec![vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]],
            None,
            0.0,
        );
        assert!(bad.is_err());
        // separation threshold enforcement
        let close = ShiftFrame::new(
            vec![
                vec![[0.0; 3], [0.0; 3]],
                vec![[1.0, 0.0, 0.0], [1.5, 0.0, 0.0]],
            ],
            None,
            5.0,
        );
        assert!(close.is_err());
        let ok = ShiftFrame::new(
            vec![
                vec![[0.0; 3], [0.0; 3]],
                vec![[3.0, 0.0, 0.0], [6.0, 0.0, 0.0]],
            ],
            None,
            5.0,
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn dyadic_identity_and_norm_invariance() {
        let grid = GridSpec::new(3, 6.0, 129).unwrap();
        let u = gaussian(grid, [0.3, -0.2, 0.1], 1.2, 1.0);
        let (same, flag) = dyadic_rescale(&u, 0, &[0.0; 3]);
        assert!(!flag);
        assert_eq!(same.values(), u.values());
        // the profile width is chosen per scale so both the source and the
        // rescaled image stay resolved and inside the box
        let pstar = 6.0;
        for (j, sigma) in [(-3, 0.22), (-2, 0.45), (-1, 0.9), (1, 1.8), (2, 1.8), (3, 1.8)]
        {
            let v = gaussian(grid, [0.0; 3], sigma, 1.0);
            let base = v.lp_norm(pstar).unwrap();
            let (w, _) = dyadic_rescale(&v, j, &[0.0; 3]);
            let rel = (w.lp_norm(pstar).unwrap() - base).abs() / base;
            assert!(rel < 0.01, "j = {j}: rel {rel}");
        }
    }

    #[test]
    fn dyadic_rescale_flags_resolution_loss() {
        let grid = GridSpec::new(3, 6.0, 33).unwrap();
        let u = gaussian(grid, [0.0; 3], 0.8, 1.0);
        let (_, fine) = dyadic_rescale(&u, 1, &[0.0; 3]);
        assert!(!fine);
        let (_, coarse) = dyadic_rescale(&u, 4, &[0.0; 3]);
        assert!(coarse, "stride 16h must be flagged for a width-0.8 bump");
    }

    #[test]
    fn aharonov_bohm_potential_is_scale_invariant() {
        let a = AnyPotential::Analytic(MagneticPotential::AharonovBohm { lambda: 0.7 });
        let grid = GridSpec::new(3, 2.0, 5).unwrap();
        let (scaled, _) =
            potential_rescale(&a, &ElectricPotential::Constant(0.0), 2, [0.0; 3], &grid);
        for x in [[1.0, 0.5, 0.0], [-0.4, 2.0, 1.0]] {
            let orig = a.eval(&x);
            let resc = scaled.eval(&x);
            for ax in 0..3 {
                assert!(
                    (orig[ax] - resc[ax]).abs() < 1e-13,
                    "axis {ax}: {} vs {}",
                    orig[ax],
                    resc[ax]
                );
            }
        }
    }

    #[test]
    fn hardy_weight_is_scale_invariant() {
        let grid = GridSpec::new(3, 2.0, 9).unwrap();
        let v = ElectricPotential::Hardy { mu: 0.2 };
        let (_, v_scaled) = potential_rescale(
            &AnyPotential::zero(),
            &v,
            1,
            [0.0; 3],
            &grid,
        );
        let direct = v.sample(&grid);
        for (a, b) in v_scaled.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_stationary_profile_synthesis() {
        let grid = GridSpec::new(2, 6.0, 33).unwrap();
        let v = gaussian(grid, [0.0; 3], 0.8, 1.0);
        let k = 4;
        let frame = ShiftFrame::new(vec![vec![[0.0; 3]; k]], None, 0.0).unwrap();
        let seq = synthesize_sequence(
            &[v.clone()],
            &frame,
            &AnyPotential::zero(),
            &quad(),
            3.0,
            0.0,
            1,
        )
        .unwrap();
        for uk in &seq {
            assert!(uk.sub(&v).max_abs() < 1e-13);
        }
    }

    #[test]
    fn two_profiles_mass_additivity() {
        let grid = GridSpec::new(2, 10.0, 81).unwrap();
        let p = 3.0;
        let v0 = gaussian(grid, [0.0; 3], 0.6, 1.0);
        let v1 = gaussian(grid, [0.0; 3], 0.5, 0.8);
        let h = grid.spacing();
        let step = |k: usize| (k as f64 + 1.0) * 4.0 * h;
        let k = 6;
        let shifts = vec![
            vec![[0.0; 3]; k],
            (0..k).map(|kk| [step(kk), 0.0, 0.0]).collect(),
        ];
        let frame = ShiftFrame::new(shifts, None, 3.0).unwrap();
        let seq = synthesize_sequence(
            &[v0.clone(), v1.clone()],
            &frame,
            &AnyPotential::zero(),
            &quad(),
            p,
            0.0,
            1,
        )
        .unwrap();
        let last = seq.last().unwrap();
        let total = last.lp_norm(p).unwrap().powf(p);
        let sum = v0.lp_norm(p).unwrap().powf(p) + v1.lp_norm(p).unwrap().powf(p);
        assert!(
            (total - sum).abs() / sum < 1e-6,
            "{total} vs {sum}"
        );
    }

    #[test]
    fn synthesis_energy_matches_gauge_covariant_prediction() {
        // one moving profile in a constant field: E_A(g_y v) equals the
        // energy of v under the corrected potential at y, to link-rule
        // accuracy
        let grid = GridSpec::new(2, 8.0, 65).unwrap();
        let b = 0.4;
        let a = AnyPotential::Analytic(MagneticPotential::ConstantField {
            b12: b,
            b13: 0.0,
            b23: 0.0,
        });
        let field = curl(&MagneticPotential::ConstantField {
            b12: b,
            b13: 0.0,
            b23: 0.0,
        });
        let v = gaussian(grid, [0.0; 3], 0.7, 1.0);
        let h = grid.spacing();
        let y = [16.0 * h, -8.0 * h, 0.0];
        let phase = poincare_phase(&a, y, &quad()).unwrap();
        let moved = magnetic_shift(&v, &y, &phase).unwrap();
        let links_a = LinkPhases::build(&a, &grid, LinkRule::Midpoint);
        let e_moved = energy_ea(&moved, &links_a);
        let a_y = translated_corrected(&field, y, &quad());
        // E_A(g_y v) = E_{A_y(. + y)}(v): links of the translated corrected
        // potential applied to the unmoved profile
        let links_ay = LinkPhases::build(&a_y, &grid, LinkRule::Midpoint);
        let e_pred = energy_ea(&v, &links_ay);
        let rel = (e_moved - e_pred).abs() / e_pred;
        assert!(rel < 1e-10, "{e_moved} vs {e_pred} (rel {rel})");
    }

    #[test]
    fn round_trip_extraction_two_profiles() {
        let grid = GridSpec::new(2, 10.0, 81).unwrap();
        let p = 3.0;
        let h = grid.spacing();
        let xi = DiscretizationSpec::new(h, 1.0, 2).unwrap();
        let v0 = gaussian(grid, [0.0; 3], 0.6, 1.0);
        let v1 = gaussian(grid, [0.0; 3], 0.5, 0.7);
        let k = 6;
        let shifts: Vec<Vec<[f64; 3]>> = vec![
            vec![[0.0; 3]; k],
            (0..k)
                .map(|kk| [((kk + 2) as f64) * 4.0 * h, 0.0, 0.0])
                .collect(),
        ];
        let frame = ShiftFrame::new(shifts.clone(), None, 3.0).unwrap();
        let seq = synthesize_sequence(
            &[v0.clone(), v1.clone()],
            &frame,
            &AnyPotential::zero(),
            &quad(),
            p,
            0.0,
            1,
        )
        .unwrap();
        let dec = extract_profiles(&seq, &xi, 1e-4, &ExtractOptions::default()).unwrap();
        assert!(!dec.aborted);
        assert_eq!(dec.profiles.len(), 2, "expected 2 profiles");
        // the dominant profile is v0 (larger mass); shifts match the
        // planted lattice points exactly
        for (k_idx, y) in dec.frame.shifts[0].iter().enumerate() {
            assert_eq!(*y, shifts[0][k_idx]);
        }
        for (k_idx, y) in dec.frame.shifts[1].iter().enumerate() {
            let d = dist(y, &shifts[1][k_idx]);
            assert!(d < 1e-12, "k {k_idx}: {:?} vs {:?}", y, shifts[1][k_idx]);
        }
        let err0 = dec.profiles[0].sub(&v0).l2_norm() / v0.l2_norm();
        let err1 = dec.profiles[1].sub(&v1).l2_norm() / v1.l2_norm();
        assert!(err0 < 0.01, "profile 0 error {err0}");
        assert!(err1 < 0.01, "profile 1 error {err1}");
        assert!(dec.residual_window_mass < 1e-4);
    }

    #[test]
    fn vanishing_noise_extracts_nothing() {
        let grid = GridSpec::new(2, 6.0, 33).unwrap();
        let h = grid.spacing();
        let xi = DiscretizationSpec::new(h, 1.0, 2).unwrap();
        let k = 6;
        let frame = ShiftFrame::new(vec![vec![[0.0; 3]; k]], None, 0.0).unwrap();
        let zero = ComplexField::zeros(grid);
        let seq = synthesize_sequence(
            &[zero],
            &frame,
            &AnyPotential::zero(),
            &quad(),
            3.0,
            0.05,
            3,
        )
        .unwrap();
        let dec = extract_profiles(&seq, &xi, 0.5, &ExtractOptions::default()).unwrap();
        assert_eq!(dec.profiles.len(), 0);
    }

    #[test]
    fn splitting_report_single_profile() {
        let grid = GridSpec::new(2, 6.0, 49).unwrap();
        let v = gaussian(grid, [0.0; 3], 0.8, 1.0);
        let k = 4;
        let frame = ShiftFrame::new(vec![vec![[0.0; 3]; k]], None, 0.0).unwrap();
        let a = AnyPotential::zero();
        let field = curl(&MagneticPotential::Zero);
        let seq =
            synthesize_sequence(&[v.clone()], &frame, &a, &quad(), 3.0, 0.0, 1).unwrap();
        let dec = ProfileDecomposition {
            profiles: vec![v],
            frame,
            remainders: vec![ComplexField::zeros(grid); k],
            residual_window_mass: 0.0,
            aborted: false,
        };
        let report = verify_splitting(
            &dec,
            &seq,
            3.0,
            &field,
            &a,
            &quad(),
            LinkRule::Midpoint,
        )
        .unwrap();
        assert!(report.p_mass_defect < 1e-12 * report.p_mass_total);
        assert!(report.l2_margin >= 0.0);
        assert!(report.energy_margin >= 0.0);
        assert!((report.t_masses[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brezis_lieb_two_scales() {
        let grid = GridSpec::new(3, 6.0, 129).unwrap();
        let w0 = gaussian(grid, [0.0; 3], 0.9, 1.0);
        let w1 = gaussian(grid, [0.0; 3], 1.8, 0.8);
        let k = 4;
        let shifts = vec![vec![[0.0; 3]; k], vec![[3.5, 0.0, 0.0]; k]];
        let scales = vec![vec![0; k], vec![3; k]];
        let frame = ShiftFrame::new(shifts, Some(scales), 8.0).unwrap();
        let a = AnyPotential::zero();
        let v = ElectricPotential::Constant(1.0);
        let seq = synthesize_sequence(
            &[w0.clone(), w1.clone()],
            &frame,
            &a,
            &quad(),
            6.0,
            0.0,
            1,
        )
        .unwrap();
        let report =
            brezis_lieb_check(&seq, &[w0, w1], &frame, &a, &v).unwrap();
        assert!(
            report.critical_mass_defect < 0.02,
            "defect {}",
            report.critical_mass_defect
        );
    }
}
