//! Gas-phase process benchmark: reagents A and B are compressed and heated,
//! react to product C in an equilibrium reactor, and C is recovered as a
//! liquid in a flash separator whose vapor is partly recycled and partly
//! purged. The composite objective is the hourly operating cost (negative
//! profit).
//!
//! Design vector x = (T_RX, P_RX, T_S, P_S, R): reactor temperature [K] and
//! pressure [bar], separator temperature [K] and pressure [bar], recycle
//! fraction. Intermediates y = (η_A, η_B, η_C, Q̇₄, |Q̇₅|): product-to-purge
//! ratio of A, purge-to-feed ratio of B, purge-to-product ratio of C, the
//! reactor duty [MJ/hr], and the separator cooling magnitude [MJ/hr].
//! ProcessState keeps the signed separator duty (Q̇₅ ≤ 0, cooling); the
//! intermediate vector carries its magnitude so the feasibility floor of
//! 1e-6 applies to all five components.
//!
//! Duty index convention (flowsheet order): Q̇₁/Q̇₂ feed heaters for A/B,
//! Q̇₃ recycle heater, Q̇₄ reactor, Q̇₅ separator; Ẇ₁/Ẇ₂ feed compressors,
//! Ẇ₃ recycle compressor.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::composite::{CompositeProblem, NodeDef};
use crate::optimize::BoxDomain;

pub const N_SPECIES: usize = 3; // A, B, C

/// Heat-capacity polynomial cp/R = α + βT + γT² + ζ/T².
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CpCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermoParams {
    /// Universal gas constant [J/mol·K].
    pub r: f64,
    /// Standard temperature [K].
    pub t_std: f64,
    /// Standard pressure [bar].
    pub p_std: f64,
    /// Standard heat of reaction [J/mol].
    pub dh_rxn: f64,
    /// Standard Gibbs free-energy change of reaction [J/mol].
    pub dg_rxn: f64,
    pub alpha: [f64; N_SPECIES],
    pub beta: [f64; N_SPECIES],
    pub gamma: [f64; N_SPECIES],
    pub zeta: [f64; N_SPECIES],
    /// Stoichiometric coefficients; Σν = −1.
    pub nu: [f64; N_SPECIES],
}

impl Default for ThermoParams {
    fn default() -> Self {
        Self {
            r: 8.314,
            t_std: 298.0,
            p_std: 1.0,
            dh_rxn: 39_200.0,
            dg_rxn: 32_900.0,
            alpha: [3.280, 3.249, 5.578],
            beta: [0.593e-3, 0.422e-3, 3.020e-3],
            gamma: [0.0, 0.0, 0.0],
            zeta: [0.040e5, 0.083e5, -0.186e5],
            nu: [-0.5, -1.5, 1.0],
        }
    }
}

impl ThermoParams {
    pub fn species_coeffs(&self, i: usize) -> CpCoeffs {
        CpCoeffs {
            alpha: self.alpha[i],
            beta: self.beta[i],
            gamma: self.gamma[i],
            zeta: self.zeta[i],
        }
    }

    /// Mole-fraction-weighted coefficients of a mixture.
    pub fn mix_coeffs(&self, frac: &[f64; N_SPECIES]) -> CpCoeffs {
        let mut c = CpCoeffs {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            zeta: 0.0,
        };
        for i in 0..N_SPECIES {
            c.alpha += frac[i] * self.alpha[i];
            c.beta += frac[i] * self.beta[i];
            c.gamma += frac[i] * self.gamma[i];
            c.zeta += frac[i] * self.zeta[i];
        }
        c
    }

    /// Stoichiometry-weighted coefficients of the reaction.
    pub fn rxn_coeffs(&self) -> CpCoeffs {
        let mut c = CpCoeffs {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            zeta: 0.0,
        };
        for i in 0..N_SPECIES {
            c.alpha += self.nu[i] * self.alpha[i];
            c.beta += self.nu[i] * self.beta[i];
            c.gamma += self.nu[i] * self.gamma[i];
            c.zeta += self.nu[i] * self.zeta[i];
        }
        c
    }

    pub fn nu_total(&self) -> f64 {
        self.nu.iter().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EconParams {
    /// Fresh feed flows [kmol/hr].
    pub feed_a: f64,
    pub feed_b: f64,
    /// Demand cap for product C [kmol/hr].
    pub demand_cap: f64,
    /// Reagent costs [USD/kmol].
    pub w_a0: f64,
    pub w_b0: f64,
    /// Product-stream values per species [USD/kmol].
    pub w_product: [f64; N_SPECIES],
    /// Utility prices: heating/cooling [USD/MJ], power [USD/kWh].
    pub w_heat: f64,
    pub w_cool: f64,
    pub w_power: f64,
    /// Demand-penalty weight [USD/hr].
    pub w_penalty: f64,
    /// Feed supply conditions (declared; reagents arrive as pressurized gas).
    pub feed_temp: f64,
    pub feed_pressure: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            feed_a: 1000.0,
            feed_b: 3000.0,
            demand_cap: 1900.0,
            w_a0: 6.00,
            w_b0: 1.40,
            w_product: [0.0, 0.0, 8.50],
            w_heat: 1.92e-2,
            w_cool: 5.00e-3,
            w_power: 1.42e-1,
            w_penalty: 1000.0,
            feed_temp: 298.0,
            feed_pressure: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlashParams {
    /// Fixed distribution coefficient of sparingly condensable A.
    pub k_a: f64,
    /// Antoine constants for C (log10 P[mmHg] = a − b/(T − c)).
    pub antoine: (f64, f64, f64),
    /// Latent heat of condensing C [MJ/kmol].
    pub latent_c: f64,
}

impl Default for FlashParams {
    fn default() -> Self {
        Self {
            k_a: 50.0,
            antoine: (7.36050, 926.132, 32.98),
            latent_c: 23.35,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TearParams {
    /// Initial substitution weight; halved whenever the residual grows.
    /// The recycle loop has positive gain, so undamped substitution
    /// converges monotonically and roughly twice as fast as 0.5-damping.
    pub damping: f64,
    /// Residual at which iteration stops early.
    pub target_tol: f64,
    /// Largest residual accepted as converged after max_passes.
    pub accept_tol: f64,
    pub max_passes: usize,
}

impl Default for TearParams {
    fn default() -> Self {
        Self {
            damping: 1.0,
            target_tol: 1e-11,
            accept_tol: 1e-6,
            max_passes: 200,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChemProcConfig {
    pub thermo: ThermoParams,
    pub econ: EconParams,
    pub flash: FlashParams,
    pub tear: TearParams,
}

/// Dimensionless enthalpy integral ∫(cp/R)dT from T° to T.
pub fn icph(t: f64, c: &CpCoeffs, t_std: f64) -> f64 {
    c.alpha * (t - t_std)
        + c.beta / 2.0 * (t * t - t_std * t_std)
        + c.gamma / 3.0 * (t * t * t - t_std * t_std * t_std)
        - c.zeta * (1.0 / t - 1.0 / t_std)
}

/// Dimensionless entropy integral ∫(cp/R)/T dT from T° to T.
pub fn icps(t: f64, c: &CpCoeffs, t_std: f64) -> f64 {
    c.alpha * (t.ln() - t_std.ln())
        + c.beta * (t - t_std)
        + c.gamma / 2.0 * (t * t - t_std * t_std)
        - c.zeta * (1.0 / (t * t) - 1.0 / (t_std * t_std))
}

/// Constant-pressure heater duty [MJ/hr] for flow F [kmol/hr] with the given
/// composition; positive when heating.
pub fn heater_duty(
    flow: f64,
    t_in: f64,
    t_out: f64,
    frac: &[f64; N_SPECIES],
    th: &ThermoParams,
) -> f64 {
    let c = th.mix_coeffs(frac);
    flow * th.r * (icph(t_out, &c, th.t_std) - icph(t_in, &c, th.t_std)) / 1000.0
}

fn cp_over_r(t: f64, c: &CpCoeffs) -> f64 {
    // Floor keeps the isentropic exponent sane for extreme extrapolated
    // compositions (negative pseudo-fractions can occur inside the moment
    // propagation probes).
    (c.alpha + c.beta * t + c.gamma * t * t + c.zeta / (t * t)).max(1.5)
}

/// Ideal-gas isentropic compressor with temperature-dependent mean heat
/// capacity (two refinement passes) and unit isentropic efficiency.
/// Returns outlet temperature [K] and power load [kW].
pub fn compressor(
    flow: f64,
    t_in: f64,
    p_in: f64,
    p_out: f64,
    frac: &[f64; N_SPECIES],
    th: &ThermoParams,
) -> Result<(f64, f64), SimError> {
    if p_out < p_in {
        return Err(SimError::InvalidInput(format!(
            "compressor outlet pressure {p_out} below inlet {p_in}"
        )));
    }
    if t_in <= 0.0 {
        return Err(SimError::InvalidInput("non-positive inlet temperature".into()));
    }
    let c = th.mix_coeffs(frac);
    let ratio = p_out / p_in;
    let mut t_out = t_in * ratio.powf(1.0 / cp_over_r(t_in, &c));
    for _ in 0..2 {
        let mean = if (t_out - t_in).abs() < 1e-9 {
            cp_over_r(t_in, &c)
        } else {
            ((icph(t_out, &c, th.t_std) - icph(t_in, &c, th.t_std)) / (t_out - t_in)).max(1.5)
        };
        t_out = t_in * ratio.powf(1.0 / mean);
    }
    let w_kw = flow * th.r * (icph(t_out, &c, th.t_std) - icph(t_in, &c, th.t_std)) / 3600.0;
    Ok((t_out, w_kw))
}

/// ΔG of reaction at temperature T [J/mol].
pub fn delta_g_rxn(t: f64, th: &ThermoParams) -> f64 {
    let c = th.rxn_coeffs();
    th.dh_rxn - (t / th.t_std) * (th.dh_rxn - th.dg_rxn)
        + th.r * (icph(t, &c, th.t_std) - t * icps(t, &c, th.t_std))
}

/// Equilibrium constant K(T) = exp(−ΔG_rxn/(R·T)).
pub fn equilibrium_constant(t: f64, th: &ThermoParams) -> f64 {
    (-delta_g_rxn(t, th) / (th.r * t)).exp()
}

/// Solves Π y_i^{ν_i} = (P/P°)^{−ν}·K for the reaction extent by bracketed
/// bisection over the physically admissible interval (all flows ≥ 0).
pub fn equilibrium_extent(
    t_rx: f64,
    p_rx: f64,
    feed: &[f64; N_SPECIES],
    th: &ThermoParams,
) -> Result<f64, SimError> {
    if feed.iter().any(|f| *f < 0.0) {
        return Err(SimError::InvalidInput("negative feed flow".into()));
    }
    let nu = th.nu;
    let mut lo = -feed[2] / nu[2];
    let mut hi = f64::INFINITY;
    for i in 0..N_SPECIES {
        if nu[i] < 0.0 {
            hi = hi.min(feed[i] / (-nu[i]));
        }
    }
    if !(hi > lo) || !hi.is_finite() {
        return Err(SimError::BracketFailure {
            what: "reaction extent",
            lo,
            hi,
        });
    }
    let span = hi - lo;
    let rhs_log = -th.nu_total() * (p_rx / th.p_std).ln()
        + equilibrium_constant(t_rx, th).ln();
    let total0: f64 = feed.iter().sum();
    let residual = |eps: f64| -> f64 {
        let total = total0 + th.nu_total() * eps;
        let mut acc = 0.0;
        for i in 0..N_SPECIES {
            let n = feed[i] + nu[i] * eps;
            acc += nu[i] * (n / total).ln();
        }
        acc - rhs_log
    };
    let delta = 1e-12 * span;
    lo += delta;
    hi -= delta;
    let (rl, rh) = (residual(lo), residual(hi));
    if !(rl < 0.0 && rh > 0.0) {
        return Err(SimError::BracketFailure {
            what: "reaction extent",
            lo,
            hi,
        });
    }
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Reactor duty [MJ/hr] for generation rate r_C [kmol/hr] at T_RX.
pub fn reactor_duty(r_c: f64, t_rx: f64, th: &ThermoParams) -> f64 {
    let c = th.rxn_coeffs();
    r_c * (th.dh_rxn + th.r * icph(t_rx, &c, th.t_std)) / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlashOutcome {
    TwoPhase,
    AllVapor,
    AllLiquid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlashResult {
    pub liquid: [f64; N_SPECIES],
    pub vapor: [f64; N_SPECIES],
    /// Separator duty [MJ/hr], ≤ 0 (cooling + condensation).
    pub duty: f64,
    pub vapor_fraction: f64,
    pub outcome: FlashOutcome,
}

/// Saturation pressure of C [bar] from the Antoine correlation.
pub fn psat_c(t: f64, fl: &FlashParams) -> f64 {
    let (a, b, c) = fl.antoine;
    let mmhg = 10f64.powf(a - b / (t - c));
    mmhg / 750.061683
}

/// Isothermal-isobaric flash: Rachford-Rice with K_C from the Antoine
/// correlation, fixed K_A, and B treated as fully non-condensable. The duty
/// is the sensible cooling of the feed from `t_in` to `t_s` plus the latent
/// heat of condensed C.
pub fn flash(
    feed: &[f64; N_SPECIES],
    t_s: f64,
    p_s: f64,
    t_in: f64,
    cfg: &ChemProcConfig,
) -> Result<FlashResult, SimError> {
    let th = &cfg.thermo;
    let fl = &cfg.flash;
    let total: f64 = feed.iter().sum();
    if total <= 0.0 {
        return Err(SimError::InvalidInput("empty flash feed".into()));
    }
    let z = [feed[0] / total, feed[1] / total, feed[2] / total];
    let k_a = fl.k_a;
    let k_c = psat_c(t_s, fl) / p_s;

    // Rachford-Rice residual with the non-condensable B term z_B/β.
    let g = |beta: f64| -> f64 {
        let mut acc = 0.0;
        acc += z[0] * (k_a - 1.0) / (1.0 + beta * (k_a - 1.0));
        acc += z[2] * (k_c - 1.0) / (1.0 + beta * (k_c - 1.0));
        if z[1] > 0.0 {
            acc += z[1] / beta;
        }
        acc
    };
    let g1 = z[0] * (k_a - 1.0) / k_a + z[2] * (k_c - 1.0) / k_c + z[1];
    let g0_no_b = z[0] * (k_a - 1.0) + z[2] * (k_c - 1.0);

    let (beta, outcome) = if g1 >= 0.0 {
        (1.0, FlashOutcome::AllVapor)
    } else if z[1] <= 0.0 && g0_no_b <= 0.0 {
        (0.0, FlashOutcome::AllLiquid)
    } else {
        let mut lo = 1e-14;
        let mut hi = 1.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), FlashOutcome::TwoPhase)
    };

    let mut liquid = [0.0; N_SPECIES];
    if outcome != FlashOutcome::AllVapor {
        liquid[0] = feed[0] * (1.0 - beta) / (1.0 + beta * (k_a - 1.0));
        liquid[2] = feed[2] * (1.0 - beta) / (1.0 + beta * (k_c - 1.0));
    }
    let vapor = [
        feed[0] - liquid[0],
        feed[1] - liquid[1],
        feed[2] - liquid[2],
    ];
    let frac = z;
    let sensible = total * th.r
        * (icph(t_s, &th.mix_coeffs(&frac), th.t_std) - icph(t_in, &th.mix_coeffs(&frac), th.t_std))
        / 1000.0;
    let duty = sensible - fl.latent_c * liquid[2];
    Ok(FlashResult {
        liquid,
        vapor,
        duty,
        vapor_fraction: beta,
        outcome,
    })
}

/// Stream flows rebuilt from the three ratio intermediates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamTable {
    /// Species generation rates [kmol/hr].
    pub generation: [f64; N_SPECIES],
    /// Purge species flows ξ_i·F_P [kmol/hr].
    pub purge: [f64; N_SPECIES],
    pub purge_total: f64,
    pub recycle_total: f64,
    /// Product species flows ψ_i·F_S [kmol/hr].
    pub product: [f64; N_SPECIES],
    pub product_total: f64,
}

/// Rebuilds generation, purge, recycle, and product flows from
/// η = (η_A, η_B, η_C) plus the fresh feeds and the recycle fraction.
pub fn reconstruct_streams(
    eta: &[f64; 3],
    feed_a: f64,
    feed_b: f64,
    recycle_frac: f64,
    th: &ThermoParams,
) -> StreamTable {
    let r_b = -(1.0 - eta[1]) * feed_b;
    let r_a = th.nu[0] / th.nu[1] * r_b;
    let r_c = th.nu[2] / th.nu[1] * r_b;
    let purge_a = (feed_a + r_a) / (1.0 + eta[0]);
    let purge_b = eta[1] * feed_b;
    let purge_c = eta[2] * r_c / (1.0 + eta[2]);
    let purge_total = purge_a + purge_b + purge_c;
    let recycle_total = purge_total * recycle_frac / (1.0 - recycle_frac);
    let product_a = eta[0] * (feed_a + r_a) / (1.0 + eta[0]);
    let product_b = 0.0;
    let product_c = r_c / (1.0 + eta[2]);
    StreamTable {
        generation: [r_a, r_b, r_c],
        purge: [purge_a, purge_b, purge_c],
        purge_total,
        recycle_total,
        product: [product_a, product_b, product_c],
        product_total: product_a + product_b + product_c,
    }
}

fn price_duty(q_mj_hr: f64, econ: &EconParams) -> f64 {
    if q_mj_hr >= 0.0 {
        econ.w_heat * q_mj_hr
    } else {
        econ.w_cool * (-q_mj_hr)
    }
}

const PURE_A: [f64; N_SPECIES] = [1.0, 0.0, 0.0];
const PURE_B: [f64; N_SPECIES] = [0.0, 1.0, 0.0];

/// White-box g(x): fresh-feed costs plus the feed compressor and heater
/// utilities, which depend only on the design point.
pub fn whitebox_g(x: &[f64], cfg: &ChemProcConfig) -> f64 {
    let (t_rx, p_rx) = (x[0], x[1]);
    let econ = &cfg.econ;
    let th = &cfg.thermo;
    let comp_a = compressor(econ.feed_a, econ.feed_temp, econ.feed_pressure, p_rx, &PURE_A, th);
    let comp_b = compressor(econ.feed_b, econ.feed_temp, econ.feed_pressure, p_rx, &PURE_B, th);
    let ((t1, w1), (t2, w2)) = match (comp_a, comp_b) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::INFINITY,
    };
    let q1 = heater_duty(econ.feed_a, t1, t_rx, &PURE_A, th);
    let q2 = heater_duty(econ.feed_b, t2, t_rx, &PURE_B, th);
    econ.w_a0 * econ.feed_a
        + econ.w_b0 * econ.feed_b
        + price_duty(q1, econ)
        + price_duty(q2, econ)
        + econ.w_power * (w1 + w2)
}

/// White-box h(x, y): the remainder of the hourly cost rebuilt from the
/// intermediates — product value, demand penalty, recycle compression and
/// reheating, and the black-box unit duties.
pub fn whitebox_h(x: &[f64], y: &[f64], cfg: &ChemProcConfig) -> f64 {
    let (t_rx, p_rx, t_s, p_s, r_frac) = (x[0], x[1], x[2], x[3], x[4]);
    let econ = &cfg.econ;
    let th = &cfg.thermo;
    let eta = [y[0], y[1], y[2]];
    let st = reconstruct_streams(&eta, econ.feed_a, econ.feed_b, r_frac, th);

    let revenue: f64 = (0..N_SPECIES).map(|i| econ.w_product[i] * st.product[i]).sum();
    let dev = (st.product[2] - econ.demand_cap) / econ.demand_cap;
    let penalty = econ.w_penalty * dev * dev;

    let mut util = 0.0;
    if st.recycle_total > 1e-12 && st.purge_total > 0.0 {
        let frac = [
            st.purge[0] / st.purge_total,
            st.purge[1] / st.purge_total,
            st.purge[2] / st.purge_total,
        ];
        match compressor(st.recycle_total, t_s, p_s, p_rx, &frac, th) {
            Ok((t3, w3)) => {
                let q3 = heater_duty(st.recycle_total, t3, t_rx, &frac, th);
                util += price_duty(q3, econ) + econ.w_power * w3;
            }
            Err(_) => return f64::INFINITY,
        }
    }
    util += price_duty(y[3], econ); // reactor duty, signed as predicted
    util += econ.w_cool * y[4]; // separator cooling magnitude

    penalty + util - revenue
}

/// Full flowsheet state at a converged design point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessState {
    pub x: [f64; 5],
    pub reactor_feed: [f64; N_SPECIES],
    pub effluent: [f64; N_SPECIES],
    pub liquid: [f64; N_SPECIES],
    pub vapor: [f64; N_SPECIES],
    pub purge: [f64; N_SPECIES],
    pub recycle: [f64; N_SPECIES],
    pub extent: f64,
    /// Q̇₁..Q̇₅ [MJ/hr]; Q̇₅ ≤ 0 by the cooling sign convention.
    pub duties: [f64; 5],
    /// Ẇ₁..Ẇ₃ [kW].
    pub loads: [f64; 3],
    pub tear_passes: usize,
    pub tear_residual: f64,
    pub flash_outcome: FlashOutcome,
    pub cost: f64,
}

/// Converges the recycle tear by damped direct substitution and returns the
/// intermediates, the composite cost, and the full stream state.
pub fn simulate(x: &[f64], cfg: &ChemProcConfig) -> Result<([f64; 5], f64, ProcessState), SimError> {
    if x.len() != 5 {
        return Err(SimError::InvalidInput(format!(
            "design point needs 5 components, got {}",
            x.len()
        )));
    }
    let (t_rx, p_rx, t_s, p_s, r_frac) = (x[0], x[1], x[2], x[3], x[4]);
    let econ = &cfg.econ;
    let th = &cfg.thermo;

    let mut recycle = [0.0f64; N_SPECIES];
    let mut passes = 0usize;
    let mut residual = f64::INFINITY;
    let mut damping = cfg.tear.damping;
    while passes < cfg.tear.max_passes {
        passes += 1;
        let feed = [
            econ.feed_a + recycle[0],
            econ.feed_b + recycle[1],
            recycle[2],
        ];
        let eps = equilibrium_extent(t_rx, p_rx, &feed, th)?;
        let effluent = [
            feed[0] + th.nu[0] * eps,
            feed[1] + th.nu[1] * eps,
            feed[2] + th.nu[2] * eps,
        ];
        let fl = flash(&effluent, t_s, p_s, t_rx, cfg)?;
        let new_recycle = [
            r_frac * fl.vapor[0],
            r_frac * fl.vapor[1],
            r_frac * fl.vapor[2],
        ];
        let scale = recycle
            .iter()
            .chain(new_recycle.iter())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let next_residual = (0..N_SPECIES)
            .map(|i| (new_recycle[i] - recycle[i]).abs())
            .fold(0.0f64, f64::max)
            / scale;
        if next_residual > residual {
            damping = (0.5 * damping).max(0.25);
        }
        residual = next_residual;
        if residual <= cfg.tear.target_tol {
            recycle = new_recycle;
            break;
        }
        for i in 0..N_SPECIES {
            recycle[i] += damping * (new_recycle[i] - recycle[i]);
        }
    }
    if residual > cfg.tear.accept_tol {
        return Err(SimError::TearDiverged { residual, passes });
    }

    // One consistent pass at the converged tear.
    let reactor_feed = [
        econ.feed_a + recycle[0],
        econ.feed_b + recycle[1],
        recycle[2],
    ];
    let eps = equilibrium_extent(t_rx, p_rx, &reactor_feed, th)?;
    let effluent = [
        reactor_feed[0] + th.nu[0] * eps,
        reactor_feed[1] + th.nu[1] * eps,
        reactor_feed[2] + th.nu[2] * eps,
    ];
    let q4 = reactor_duty(eps, t_rx, th);
    let fl = flash(&effluent, t_s, p_s, t_rx, cfg)?;
    let purge = [
        (1.0 - r_frac) * fl.vapor[0],
        (1.0 - r_frac) * fl.vapor[1],
        (1.0 - r_frac) * fl.vapor[2],
    ];
    let recycle_final = [
        r_frac * fl.vapor[0],
        r_frac * fl.vapor[1],
        r_frac * fl.vapor[2],
    ];

    if purge[0] <= 0.0 || fl.liquid[2] <= 0.0 || purge[2] <= 0.0 {
        return Err(SimError::NonPhysical(format!(
            "degenerate separation at x = {x:?}: purge A {}, liquid C {}",
            purge[0], fl.liquid[2]
        )));
    }
    let eta_a = fl.liquid[0] / purge[0];
    let eta_b = purge[1] / econ.feed_b;
    let eta_c = purge[2] / fl.liquid[2];
    let y = [eta_a, eta_b, eta_c, q4, -fl.duty];

    let cost = whitebox_g(x, cfg) + whitebox_h(x, &y, cfg);

    // Feed-train values for the state table.
    let (t1, w1) = compressor(econ.feed_a, econ.feed_temp, econ.feed_pressure, p_rx, &PURE_A, th)?;
    let (t2, w2) = compressor(econ.feed_b, econ.feed_temp, econ.feed_pressure, p_rx, &PURE_B, th)?;
    let q1 = heater_duty(econ.feed_a, t1, t_rx, &PURE_A, th);
    let q2 = heater_duty(econ.feed_b, t2, t_rx, &PURE_B, th);
    let vap_total: f64 = fl.vapor.iter().sum();
    let (q3, w3) = if recycle_final.iter().sum::<f64>() > 1e-12 && vap_total > 0.0 {
        let frac = [
            fl.vapor[0] / vap_total,
            fl.vapor[1] / vap_total,
            fl.vapor[2] / vap_total,
        ];
        let rec_total: f64 = recycle_final.iter().sum();
        let (t3, w3) = compressor(rec_total, t_s, p_s, p_rx, &frac, th)?;
        (heater_duty(rec_total, t3, t_rx, &frac, th), w3)
    } else {
        (0.0, 0.0)
    };

    let state = ProcessState {
        x: [t_rx, p_rx, t_s, p_s, r_frac],
        reactor_feed,
        effluent,
        liquid: fl.liquid,
        vapor: fl.vapor,
        purge,
        recycle: recycle_final,
        extent: eps,
        duties: [q1, q2, q3, q4, fl.duty],
        loads: [w1, w2, w3],
        tear_passes: passes,
        tear_residual: residual,
        flash_outcome: fl.outcome,
        cost,
    };
    Ok((y, cost, state))
}

/// The SI feasibility bounds for the five intermediates.
pub fn feasibility_bounds() -> ([f64; 5], [f64; 5]) {
    (
        [1e-6; 5],
        [1.0, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY],
    )
}

pub fn design_box() -> BoxDomain {
    BoxDomain::new(
        vec![673.0, 250.0, 288.0, 140.0, 0.5],
        vec![973.0, 450.0, 338.0, 170.0, 0.9],
    )
    .unwrap()
}

/// Assembles the grey-box problem: five intermediates with the nested-input
/// structure (η_B feeds η_A, η_C, the reactor duty, and the separator duty).
pub fn build_problem(cfg: ChemProcConfig) -> CompositeProblem {
    let cfg = Arc::new(cfg);
    let (lo, hi) = feasibility_bounds();
    let defs = vec![
        NodeDef {
            name: "eta_a".into(),
            x_inputs: vec![2, 3],
            y_input_names: vec!["eta_b".into()],
            lower: lo[0],
            upper: hi[0],
        },
        NodeDef {
            name: "eta_b".into(),
            x_inputs: vec![0, 1, 2, 4],
            y_input_names: vec![],
            lower: lo[1],
            upper: hi[1],
        },
        NodeDef {
            name: "eta_c".into(),
            x_inputs: vec![2, 3],
            y_input_names: vec!["eta_b".into()],
            lower: lo[2],
            upper: hi[2],
        },
        NodeDef {
            name: "q4".into(),
            x_inputs: vec![0, 1],
            y_input_names: vec!["eta_a".into(), "eta_b".into()],
            lower: lo[3],
            upper: hi[3],
        },
        NodeDef {
            name: "q5".into(),
            x_inputs: vec![0, 2, 3, 4],
            y_input_names: vec!["eta_b".into()],
            lower: lo[4],
            upper: hi[4],
        },
    ];
    let g_cfg = Arc::clone(&cfg);
    let h_cfg = Arc::clone(&cfg);
    let s_cfg = Arc::clone(&cfg);
    CompositeProblem::new(
        design_box(),
        defs,
        Arc::new(move |x: &[f64]| whitebox_g(x, &g_cfg)),
        Arc::new(move |x: &[f64], y: &[f64]| whitebox_h(x, y, &h_cfg)),
        Arc::new(move |x: &[f64]| {
            simulate(x, &s_cfg)
                .map(|(y, _, _)| y.to_vec())
                .map_err(|e| e.to_string())
        }),
    )
    .expect("chemical process problem definition is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ChemProcConfig {
        ChemProcConfig::default()
    }

    fn sample_box(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b = design_box();
        (0..5)
            .map(|i| rng.gen_range(b.lower[i]..b.upper[i]))
            .collect()
    }

    #[test]
    fn icph_hand_cases() {
        let th = ThermoParams::default();
        let any = CpCoeffs {
            alpha: 2.3,
            beta: 1.7e-3,
            gamma: 0.2e-6,
            zeta: -500.0,
        };
        assert_eq!(icph(th.t_std, &any, th.t_std), 0.0);

        let unit_alpha = CpCoeffs {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            zeta: 0.0,
        };
        assert_relative_eq!(icph(398.0, &unit_alpha, th.t_std), 100.0, epsilon = 1e-12);

        // Pure-C coefficients at 350 K, term-by-term oracle.
        let c = th.species_coeffs(2);
        let expected = 5.578 * (350.0 - 298.0)
            + 3.020e-3 / 2.0 * (350.0f64.powi(2) - 298.0f64.powi(2))
            + 0.0
            - (-0.186e5) * (1.0 / 350.0 - 1.0 / 298.0);
        assert_relative_eq!(icph(350.0, &c, th.t_std), expected, epsilon = 1e-10);
    }

    #[test]
    fn icps_hand_cases() {
        let th = ThermoParams::default();
        let any = CpCoeffs {
            alpha: 1.1,
            beta: 2.0e-3,
            gamma: 0.0,
            zeta: 900.0,
        };
        assert_eq!(icps(th.t_std, &any, th.t_std), 0.0);

        let unit_beta = CpCoeffs {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            zeta: 0.0,
        };
        assert_relative_eq!(icps(299.0, &unit_beta, th.t_std), 1.0, epsilon = 1e-12);

        // Reaction-weighted coefficients at 800 K, term-by-term oracle.
        let c = th.rxn_coeffs();
        let expected = c.alpha * (800.0f64.ln() - 298.0f64.ln())
            + c.beta * (800.0 - 298.0)
            + c.gamma / 2.0 * (800.0f64.powi(2) - 298.0f64.powi(2))
            - c.zeta * (1.0 / 800.0f64.powi(2) - 1.0 / 298.0f64.powi(2));
        assert_relative_eq!(icps(800.0, &c, th.t_std), expected, epsilon = 1e-12);
    }

    #[test]
    fn heater_duty_cases() {
        let th = ThermoParams::default();
        assert_eq!(heater_duty(1000.0, 400.0, 400.0, &PURE_A, &th), 0.0);
        let q1 = heater_duty(1000.0, 300.0, 400.0, &PURE_A, &th);
        let q2 = heater_duty(2000.0, 300.0, 400.0, &PURE_A, &th);
        assert_relative_eq!(q2, 2.0 * q1, epsilon = 1e-10);

        // Hand evaluation from the Table coefficients for pure A, 300→400 K.
        let c = th.species_coeffs(0);
        let d_icph = icph(400.0, &c, th.t_std) - icph(300.0, &c, th.t_std);
        assert_relative_eq!(q1, 1000.0 * 8.314 * d_icph / 1000.0, epsilon = 1e-12);
        assert_relative_eq!(q1, 2927.3, max_relative = 1e-3);
    }

    #[test]
    fn compressor_identity_monotonicity_and_constant_gamma_oracle() {
        let th = ThermoParams::default();
        let (t_out, w) = compressor(500.0, 300.0, 2.0, 2.0, &PURE_B, &th).unwrap();
        assert_relative_eq!(t_out, 300.0, epsilon = 1e-9);
        assert!(w.abs() < 1e-9);

        let mut last_t = 0.0;
        let mut last_w = 0.0;
        for p_out in [2.0, 3.0, 5.0, 9.0] {
            let (t, w) = compressor(500.0, 300.0, 1.0, p_out, &PURE_B, &th).unwrap();
            assert!(t > last_t && w > last_w);
            last_t = t;
            last_w = w;
        }

        // Constant-γ analytic oracle with γ built from the mean cp.
        let (t_out, _) = compressor(1000.0, 300.0, 1.0, 3.0, &PURE_B, &th).unwrap();
        let c = th.mix_coeffs(&PURE_B);
        let cpr = (icph(t_out, &c, th.t_std) - icph(300.0, &c, th.t_std)) / (t_out - 300.0);
        let t_ref = 300.0 * 3.0f64.powf(1.0 / cpr);
        assert_relative_eq!(t_out, t_ref, max_relative = 0.01);

        assert!(compressor(1.0, 300.0, 5.0, 2.0, &PURE_B, &th).is_err());
    }

    #[test]
    fn equilibrium_extent_admissible_and_monotone_in_pressure() {
        let th = ThermoParams::default();
        let feed = [500.0, 1500.0, 0.0];
        let mut last = 0.0;
        for p in [100.0, 200.0, 300.0, 400.0] {
            let eps = equilibrium_extent(700.0, p, &feed, &th).unwrap();
            for i in 0..N_SPECIES {
                assert!(feed[i] + th.nu[i] * eps >= 0.0);
            }
            assert!(eps > last, "extent should grow with pressure");
            last = eps;
        }
    }

    #[test]
    fn equilibrium_extent_matches_dense_residual_scan() {
        let th = ThermoParams::default();
        let feed = [500.0, 1500.0, 0.0];
        let eps = equilibrium_extent(700.0, 300.0, &feed, &th).unwrap();

        // Brute-force scan of the residual over the admissible interval.
        let hi = (2.0 * feed[0]).min(feed[1] / 1.5);
        let rhs_log = (300.0f64 / th.p_std).ln() + equilibrium_constant(700.0, &th).ln();
        let residual = |e: f64| -> f64 {
            let total = 2000.0 - e;
            th.nu[0] * ((feed[0] - 0.5 * e) / total).ln()
                + th.nu[1] * ((feed[1] - 1.5 * e) / total).ln()
                + th.nu[2] * ((e) / total).ln()
                - rhs_log
        };
        let n = 1_000_000;
        let mut best = 0.0;
        for k in 1..n {
            let e = hi * k as f64 / n as f64;
            if residual(e) >= 0.0 {
                best = e;
                break;
            }
        }
        assert_relative_eq!(eps, best, max_relative = 1e-5);
        assert!((eps - best).abs() / hi < 1e-6);
    }

    #[test]
    fn reactor_duty_linearity_and_hand_value() {
        let th = ThermoParams::default();
        assert_eq!(reactor_duty(0.0, 800.0, &th), 0.0);
        let q1 = reactor_duty(100.0, 800.0, &th);
        let q2 = reactor_duty(200.0, 800.0, &th);
        assert_relative_eq!(q2, 2.0 * q1, epsilon = 1e-12);
        let c = th.rxn_coeffs();
        let expected = 100.0 * (39_200.0 + 8.314 * icph(800.0, &c, th.t_std)) / 1000.0;
        assert_relative_eq!(q1, expected, epsilon = 1e-10);
    }

    #[test]
    fn flash_no_c_means_no_liquid_and_balances_close() {
        let c = cfg();
        let res = flash(&[300.0, 900.0, 0.0], 300.0, 150.0, 800.0, &c).unwrap();
        let liq: f64 = res.liquid.iter().sum();
        assert!(liq.abs() < 1e-12);
        for i in 0..N_SPECIES {
            assert!(res.vapor[i] >= 0.0);
        }

        let feed = [200.0, 600.0, 900.0];
        let res = flash(&feed, 300.0, 160.0, 850.0, &c).unwrap();
        for i in 0..N_SPECIES {
            assert_relative_eq!(res.liquid[i] + res.vapor[i], feed[i], epsilon = 1e-10);
            assert!(res.liquid[i] >= 0.0 && res.vapor[i] >= 0.0);
        }
        assert_eq!(res.liquid[1], 0.0);
        assert!(res.duty < 0.0);
    }

    #[test]
    fn flash_c_recovery_grows_as_separator_cools() {
        let c = cfg();
        let feed = [200.0, 600.0, 900.0];
        let mut last = -1.0;
        for t_s in [338.0, 325.0, 310.0, 295.0, 288.0] {
            let res = flash(&feed, t_s, 160.0, 850.0, &c).unwrap();
            assert!(
                res.liquid[2] > last,
                "C recovery should rise as T_S falls (t_s={t_s})"
            );
            last = res.liquid[2];
        }
    }

    #[test]
    fn simulate_converges_and_closes_species_balances() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let x = sample_box(&mut rng);
            let (y, cost, st) = simulate(&x, &c).unwrap();
            assert!(cost.is_finite());
            assert!(st.tear_residual <= c.tear.accept_tol);
            // Species closure: fresh + generation = product + purge, relative
            // to the gross species throughput.
            let fresh = [c.econ.feed_a, c.econ.feed_b, 0.0];
            for i in 0..N_SPECIES {
                let gen = c.thermo.nu[i] * st.extent;
                let input = fresh[i] + gen;
                let output = st.liquid[i] + st.purge[i];
                let scale = (fresh[i] + gen.abs()).max(output.abs()).max(1.0);
                assert!(
                    ((input - output) / scale).abs() < 1e-6,
                    "species {i} imbalance at {x:?}: in {input}, out {output}"
                );
            }
            // Feasibility of the intermediates per the SI bounds.
            let (lo, hi) = feasibility_bounds();
            for i in 0..5 {
                assert!(y[i] >= lo[i], "y[{i}] = {} below lower bound", y[i]);
                assert!(y[i] <= hi[i], "y[{i}] = {} above upper bound", y[i]);
            }
            // Cooling sign convention.
            assert!(st.duties[4] <= 0.0);
            assert!(st.extent > 0.0);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let c = cfg();
        let x = [850.0, 350.0, 300.0, 160.0, 0.8];
        let a = simulate(&x, &c).unwrap();
        let b = simulate(&x, &c).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn higher_recycle_reduces_purge_losses() {
        let c = cfg();
        let mut last_a = f64::INFINITY;
        let mut last_b = f64::INFINITY;
        for r in [0.5, 0.7, 0.9] {
            let x = [850.0, 350.0, 295.0, 165.0, r];
            let (_, _, st) = simulate(&x, &c).unwrap();
            assert!(st.purge[0] < last_a, "purge A should fall as R rises");
            assert!(st.purge[1] < last_b, "purge B should fall as R rises");
            last_a = st.purge[0];
            last_b = st.purge[1];
        }
    }

    #[test]
    fn reconstruction_of_simulated_intermediates_reproduces_streams() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = sample_box(&mut rng);
            let (y, cost, st) = simulate(&x, &c).unwrap();
            let eta = [y[0], y[1], y[2]];
            let rec = reconstruct_streams(&eta, c.econ.feed_a, c.econ.feed_b, x[4], &c.thermo);
            for i in 0..N_SPECIES {
                let scale = st.purge[i].abs().max(1.0);
                assert!(
                    ((rec.purge[i] - st.purge[i]) / scale).abs() < 1e-8,
                    "purge {i} mismatch"
                );
                let scale = st.liquid[i].abs().max(1.0);
                assert!(
                    ((rec.product[i] - st.liquid[i]) / scale).abs() < 1e-8,
                    "product {i} mismatch"
                );
            }
            let rec_total: f64 = st.recycle.iter().sum();
            assert!(((rec.recycle_total - rec_total) / rec_total.max(1.0)).abs() < 1e-8);
            // ψ_B F_S = 0 exactly.
            assert_eq!(rec.product[1], 0.0);
            // The composite split reproduces the simulator's own cost.
            let f = whitebox_g(&x, &c) + whitebox_h(&x, &y, &c);
            assert_relative_eq!(f, cost, epsilon = 1e-9);
        }
    }

    #[test]
    fn reconstruction_trivial_cases() {
        let th = ThermoParams::default();
        // η_B = 1 → no conversion → no generation, no product C.
        let st = reconstruct_streams(&[0.1, 1.0, 0.5], 1000.0, 3000.0, 0.8, &th);
        assert_eq!(st.generation[1], 0.0);
        assert_eq!(st.generation[2], 0.0);
        assert_eq!(st.product[2], 0.0);
    }

    #[test]
    fn whitebox_h_is_finite_across_the_feasible_y_region() {
        let c = cfg();
        let x = [800.0, 350.0, 300.0, 155.0, 0.85];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let y = [
                rng.gen_range(1e-6..1.0),
                rng.gen_range(1e-6..3.0),
                rng.gen_range(1e-6..5.0),
                rng.gen_range(1e-6..2e5),
                rng.gen_range(1e-6..2e5),
            ];
            let h = whitebox_h(&x, &y, &c);
            assert!(h.is_finite(), "h not finite at y = {y:?}");
        }
    }

    #[test]
    fn cost_is_on_the_expected_scale_in_the_profitable_region() {
        // Near the region the literature optimum sits in, the hourly cost is
        // negative (profitable) at the thousands-of-USD scale.
        let c = cfg();
        let (_, cost, st) = simulate(&[844.0, 346.0, 288.0, 170.0, 0.9], &c).unwrap();
        assert!(cost < 0.0, "expected profit, got {cost}");
        assert!(cost > -20_000.0);
        assert!(st.liquid[2] > 1000.0, "product C flow {}", st.liquid[2]);
    }
}
