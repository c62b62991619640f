//! Implantation layouts, beam + straggle sampling, and dose-dependent
//! conversion of ions into defects.
//!
//! Units are fixed: positions in nanometers, doses in ions per spot.
//! Coordinates are continuous reals on a right-handed (x, y, z) frame with
//! z the implantation depth axis.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Converts a full-width-at-half-maximum to a Gaussian sigma.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1 / (2 sqrt(2 ln 2))

/// One targeted implantation site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub spot_id: u32,
    /// Nominal beam target (x, y) in nm.
    pub center_xy: (f64, f64),
    /// Ions delivered to this spot.
    pub dose: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Array,
    Stripe,
}

/// A grid or stripe of implantation targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantPlan {
    pub kind: PlanKind,
    pub spots: Vec<Spot>,
}

impl ImplantPlan {
    /// Checks spot-id uniqueness. Doses are unsigned by construction.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.spots.iter().map(|s| s.spot_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.spots.len() {
            return Err(Error::invalid("duplicate spot_id in implant plan"));
        }
        Ok(())
    }

    pub fn total_dose(&self) -> u64 {
        self.spots.iter().map(|s| u64::from(s.dose)).sum()
    }

    /// Stable FNV-1a fingerprint of the spot list, used by defect maps to
    /// reference the plan they were produced from.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |w: u64| {
            for b in w.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        feed(self.spots.len() as u64);
        for s in &self.spots {
            feed(u64::from(s.spot_id));
            feed(s.center_xy.0.to_bits());
            feed(s.center_xy.1.to_bits());
            feed(u64::from(s.dose));
        }
        h
    }
}

/// Gaussian beam-plus-straggle statistics, calibrated from stopping-range
/// simulation summary numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamStraggleModel {
    /// Gaussian std of the focused beam, nm.
    pub beam_sigma_nm: f64,
    /// Mean stopping depth, nm.
    pub depth_mean_nm: f64,
    /// Longitudinal straggle std, nm.
    pub depth_sigma_nm: f64,
    /// Lateral straggle std per axis, nm.
    pub lateral_sigma_nm: f64,
}

impl Default for BeamStraggleModel {
    /// 7.5 nm FWHM beam; 18.5 nm mean depth with 7 nm longitudinal and
    /// 6 nm lateral straggle.
    fn default() -> Self {
        BeamStraggleModel {
            beam_sigma_nm: 7.5 * FWHM_TO_SIGMA,
            depth_mean_nm: 18.5,
            depth_sigma_nm: 7.0,
            lateral_sigma_nm: 6.0,
        }
    }
}

impl BeamStraggleModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("beam_sigma_nm", self.beam_sigma_nm),
            ("depth_mean_nm", self.depth_mean_nm),
            ("depth_sigma_nm", self.depth_sigma_nm),
            ("lateral_sigma_nm", self.lateral_sigma_nm),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-axis lateral std of landed ions: beam and straggle add in
    /// quadrature.
    pub fn lateral_total_sigma(&self) -> f64 {
        (self.beam_sigma_nm.powi(2) + self.lateral_sigma_nm.powi(2)).sqrt()
    }
}

/// Phenomenological dose-dependent conversion probability
/// `yield(d) = y0 / (1 + (d/d_c)^n)`: flat at low dose, rolling off as
/// lattice damage accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageYieldModel {
    /// Low-dose conversion probability per ion, in (0, 1].
    pub y0: f64,
    /// Damage onset dose, ions/spot.
    pub d_c: f64,
    /// Roll-off exponent, >= 1.
    pub n: f64,
}

impl Default for DamageYieldModel {
    /// yield(40) = 0.0392, matching the measured low-dose conversion, while
    /// keeping d*yield(d) increasing through 700 ions/spot so mean spot
    /// brightness grows monotonically with dose.
    fn default() -> Self {
        DamageYieldModel {
            y0: 0.04,
            d_c: 550.0,
            n: 1.5,
        }
    }
}

impl DamageYieldModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.y0 > 0.0 && self.y0 <= 1.0) {
            return Err(Error::invalid(format!("y0 must be in (0,1], got {}", self.y0)));
        }
        if !(self.d_c > 0.0) {
            return Err(Error::invalid(format!("d_c must be > 0, got {}", self.d_c)));
        }
        if !(self.n >= 1.0) {
            return Err(Error::invalid(format!("n must be >= 1, got {}", self.n)));
        }
        Ok(())
    }
}

/// One realized defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub spot_id: u32,
    /// Stopping position (x, y, z) in nm.
    pub position_xyz: (f64, f64, f64),
}

/// Defects realized from an implantation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectMap {
    /// Fingerprint of the plan these defects were generated from.
    pub plan_ref: u64,
    pub defects: Vec<Defect>,
}

impl DefectMap {
    pub fn count_for_spot(&self, spot_id: u32) -> usize {
        self.defects.iter().filter(|d| d.spot_id == spot_id).count()
    }

    /// Per-spot defect counts in plan order.
    pub fn counts_per_spot(&self, plan: &ImplantPlan) -> Vec<u32> {
        plan.spots
            .iter()
            .map(|s| self.count_for_spot(s.spot_id) as u32)
            .collect()
    }
}

/// Sampled stopping positions of every ion delivered to one spot.
#[derive(Debug, Clone, PartialEq)]
pub struct IonPlacement {
    pub spot_id: u32,
    pub positions: Vec<(f64, f64, f64)>,
}

/// Lays out `rows x cols` spots on a rectangular lattice with the given
/// pitch, all with the same dose. Spot (r, c) sits at
/// (r * pitch, c * pitch) nm with row-major ids.
pub fn plan_array(rows: u32, cols: u32, pitch_um: f64, dose: u32) -> Result<ImplantPlan> {
    if rows < 1 || cols < 1 {
        return Err(Error::invalid("rows and cols must be >= 1"));
    }
    if !(pitch_um > 0.0) || !pitch_um.is_finite() {
        return Err(Error::invalid(format!("pitch_um must be > 0, got {pitch_um}")));
    }
    let pitch_nm = pitch_um * 1e3;
    let mut spots = Vec::with_capacity((rows as usize) * (cols as usize));
    for r in 0..rows {
        for c in 0..cols {
            spots.push(Spot {
                spot_id: r * cols + c,
                center_xy: (f64::from(r) * pitch_nm, f64::from(c) * pitch_nm),
                dose,
            });
        }
    }
    Ok(ImplantPlan {
        kind: PlanKind::Array,
        spots,
    })
}

/// Covers a `length_um x width_um` rectangle with sites spaced `step_nm`
/// in each direction: `floor(length/step)+1` columns by
/// `floor(width/step)+1` rows, each receiving `dose_per_site` ions.
pub fn plan_stripe(
    length_um: f64,
    width_um: f64,
    step_nm: f64,
    dose_per_site: u32,
) -> Result<ImplantPlan> {
    if !(length_um > 0.0) || !(width_um > 0.0) {
        return Err(Error::invalid("stripe dimensions must be > 0"));
    }
    if !(step_nm > 0.0) {
        return Err(Error::invalid(format!("step_nm must be > 0, got {step_nm}")));
    }
    let length_nm = length_um * 1e3;
    let width_nm = width_um * 1e3;
    if step_nm > length_nm || step_nm > width_nm {
        return Err(Error::invalid(format!(
            "step {step_nm} nm exceeds stripe dimensions {length_nm} x {width_nm} nm"
        )));
    }
    let n_len = (length_nm / step_nm).floor() as u32 + 1;
    let n_wid = (width_nm / step_nm).floor() as u32 + 1;
    let mut spots = Vec::with_capacity((n_len as usize) * (n_wid as usize));
    for i in 0..n_len {
        for j in 0..n_wid {
            spots.push(Spot {
                spot_id: i * n_wid + j,
                center_xy: (f64::from(i) * step_nm, f64::from(j) * step_nm),
                dose: dose_per_site,
            });
        }
    }
    Ok(ImplantPlan {
        kind: PlanKind::Stripe,
        spots,
    })
}

/// Samples stopping positions for every ion in the plan.
///
/// x and y are Gaussian around the spot center with per-axis variance
/// `beam_sigma^2 + lateral_sigma^2`; z is Gaussian(depth_mean,
/// depth_sigma^2). Each spot draws from the substream
/// `(seed, "ion_xyz", spot_id)`, so spots may be sampled in parallel
/// without changing the result.
pub fn sample_ion_positions(
    plan: &ImplantPlan,
    model: &BeamStraggleModel,
    seed: u64,
) -> Result<Vec<IonPlacement>> {
    plan.validate()?;
    model.validate()?;
    let lateral = Normal::new(0.0, model.lateral_total_sigma()).expect("valid sigma");
    let depth = Normal::new(model.depth_mean_nm, model.depth_sigma_nm).expect("valid sigma");
    let mut out = Vec::with_capacity(plan.spots.len());
    for spot in &plan.spots {
        let mut rng = substream(seed, "ion_xyz", u64::from(spot.spot_id));
        let mut positions = Vec::with_capacity(spot.dose as usize);
        for _ in 0..spot.dose {
            let dx = lateral.sample(&mut rng);
            let dy = lateral.sample(&mut rng);
            let z = depth.sample(&mut rng);
            positions.push((spot.center_xy.0 + dx, spot.center_xy.1 + dy, z));
        }
        out.push(IonPlacement {
            spot_id: spot.spot_id,
            positions,
        });
    }
    Ok(out)
}

/// Conversion probability per ion at the given dose:
/// `y0 / (1 + (dose/d_c)^n)`.
pub fn yield_at_dose(model: &DamageYieldModel, dose: f64) -> Result<f64> {
    model.validate()?;
    if !(dose >= 0.0) {
        return Err(Error::invalid(format!("dose must be >= 0, got {dose}")));
    }
    Ok(model.y0 / (1.0 + (dose / model.d_c).powf(model.n)))
}

/// Converts sampled ions into defects: each ion independently becomes a
/// defect with probability `yield_at_dose(model, dose of its spot)`,
/// inheriting the ion's position. Per-spot substream
/// `(seed, "convert", spot_id)`.
pub fn convert_to_defects(
    positions: &[IonPlacement],
    model: &DamageYieldModel,
    plan: &ImplantPlan,
    seed: u64,
) -> Result<DefectMap> {
    model.validate()?;
    let mut defects = Vec::new();
    for placement in positions {
        let dose = placement.positions.len() as f64;
        let p = yield_at_dose(model, dose)?;
        let mut rng = substream(seed, "convert", u64::from(placement.spot_id));
        for &pos in &placement.positions {
            if rng.random::<f64>() < p {
                defects.push(Defect {
                    spot_id: placement.spot_id,
                    position_xyz: pos,
                });
            }
        }
    }
    Ok(DefectMap {
        plan_ref: plan.fingerprint(),
        defects,
    })
}
