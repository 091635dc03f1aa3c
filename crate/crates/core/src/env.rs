//! The rate objective, its feasible set, and one environment transition.
//!
//! The DDPG action is a vector in `[−1, 1]^{2M²+2N}`. The first `2M²`
//! entries decode (column-major, real block then imaginary block) to a
//! complex `M × M` matrix `A`, and the covariance is `Q = p · AAᴴ / tr(AAᴴ)`,
//! which is PSD with trace exactly `p` for every `A ≠ 0`. The remaining `2N`
//! entries are `Re θ` then `Im θ`; each pair is scaled to unit modulus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::channel::{composite_channel, ChannelPair, CoordNormalizer, Point3, UeArea};
use crate::error::{len_mismatch, shape_mismatch, Error, Result};
use crate::linalg::{
    complex_to_realvec, hermitian_eig, logdet_capacity, realvec_to_complex, CMatrix, RealVector,
    C64,
};
use crate::rng::RngStream;

pub fn dbm_to_watts(x_dbm: f64) -> f64 {
    10f64.powf((x_dbm - 30.0) / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Transmit power budget `p`, watts.
    pub power_budget_p: f64,
    /// Noise power `σ²`, watts.
    pub noise_power_sigma2: f64,
}

impl EnvConfig {
    pub fn from_dbm(p_dbm: f64, sigma2_dbm: f64) -> Result<Self> {
        let cfg = EnvConfig {
            power_budget_p: dbm_to_watts(p_dbm),
            noise_power_sigma2: dbm_to_watts(sigma2_dbm),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_budget_p > 0.0 && self.noise_power_sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power budget and noise power must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Unit-modulus RIS reflection coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct RisPhases(Vec<C64>);

impl RisPhases {
    pub fn new(theta: Vec<C64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidArgument("RIS phase vector is empty".into()));
        }
        if let Some((i, t)) = theta
            .iter()
            .enumerate()
            .find(|(_, t)| (t.norm() - 1.0).abs() > 1e-9)
        {
            return Err(Error::InvalidArgument(format!(
                "theta[{i}] = {t} is not unit modulus"
            )));
        }
        Ok(RisPhases(theta))
    }

    pub fn from_angles(phi: &[f64]) -> Self {
        RisPhases(phi.iter().map(|&p| C64::from_polar(1.0, p)).collect())
    }

    pub fn ones(n: usize) -> Self {
        RisPhases(vec![C64::new(1.0, 0.0); n])
    }

    /// Independent uniform phases on `[0, 2π)`.
    pub fn random(n: usize, rng: &mut RngStream) -> Self {
        RisPhases(
            (0..n)
                .map(|_| C64::from_polar(1.0, 2.0 * PI * rng.uniform()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn angles(&self) -> Vec<f64> {
        self.0
            .iter()
            .map(|t| t.arg().rem_euclid(2.0 * PI))
            .collect()
    }
}

impl std::ops::Deref for RisPhases {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

/// Transmit covariance: Hermitian PSD with bounded trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitCovariance(CMatrix);

impl TransmitCovariance {
    pub fn new(q: CMatrix, power_budget: f64) -> Result<Self> {
        q.check_hermitian()?;
        let (vals, _) = hermitian_eig(&q)?;
        let min = vals.last().copied().unwrap_or(0.0);
        if min < -1e-9 {
            return Err(Error::InvalidArgument(format!(
                "covariance has eigenvalue {min}"
            )));
        }
        let tr = q.trace().re;
        if tr > power_budget + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "trace {tr} exceeds power budget {power_budget}"
            )));
        }
        Ok(TransmitCovariance(q))
    }

    pub fn zeros(m: usize) -> Self {
        TransmitCovariance(CMatrix::zeros(m, m))
    }

    /// `(p/M) I`.
    pub fn isotropic(m: usize, power_budget: f64) -> Self {
        TransmitCovariance(CMatrix::identity(m).scale(power_budget / m as f64))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }
}

/// Everything the agent observes at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub q: TransmitCovariance,
    pub theta: RisPhases,
    /// Rate `R^t` in bits/s/Hz.
    pub rate: f64,
    pub loc_bs: Point3,
    pub loc_ris: Point3,
    pub loc_ue: Point3,
}

impl EnvState {
    pub fn encoded_len(m: usize, n: usize) -> usize {
        2 * m * m + 2 * n + 10
    }

    /// `(vec(Re Q, Im Q), Re θ, Im θ, R, loc_BS, loc_RIS, loc_UE)`.
    ///
    /// Coordinates are raw meters unless a normalizer is supplied.
    pub fn encode(&self, coords: Option<&CoordNormalizer>) -> RealVector {
        let mut v = complex_to_realvec(self.q.matrix()).into_inner();
        v.extend(self.theta.iter().map(|t| t.re));
        v.extend(self.theta.iter().map(|t| t.im));
        v.push(self.rate);
        for p in [self.loc_bs, self.loc_ris, self.loc_ue] {
            match coords {
                Some(n) => v.extend(n.apply(p)),
                None => v.extend(p.to_array()),
            }
        }
        RealVector(v)
    }
}

/// Raw (pre-projection) action vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvAction {
    pub raw: RealVector,
}

impl EnvAction {
    pub fn encoded_len(m: usize, n: usize) -> usize {
        2 * m * m + 2 * n
    }
}

/// `log₂ det(I_K + H̄ Q H̄ᴴ / σ²)`.
pub fn achievable_rate(h_bar: &CMatrix, q: &TransmitCovariance, sigma2: f64) -> Result<f64> {
    if h_bar.cols() != q.dim() {
        return Err(shape_mismatch(
            "achievable_rate",
            h_bar.shape(),
            q.matrix().shape(),
        ));
    }
    let k = h_bar.rows();
    let hq = h_bar.matmul(q.matrix())?;
    let mut x = hq.matmul(&h_bar.conj_transpose())?.scale(1.0 / sigma2);
    for i in 0..k {
        x[(i, i)] += C64::new(1.0, 0.0);
    }
    // Exact Hermitian symmetry; the product only differs by rounding.
    let x = x.hermitian_part();
    Ok(logdet_capacity(&x)?.max(0.0))
}

/// Maps a raw action onto the feasible set.
pub fn project_action(
    a: &EnvAction,
    m: usize,
    n: usize,
    power_budget: f64,
) -> Result<(TransmitCovariance, RisPhases)> {
    let expected = EnvAction::encoded_len(m, n);
    if a.raw.len() != expected {
        return Err(len_mismatch("project_action", expected, a.raw.len()));
    }
    let split = 2 * m * m;
    let factor = realvec_to_complex(&a.raw[..split], m, m)?;
    let aah = factor.matmul(&factor.conj_transpose())?.hermitian_part();
    let tr = aah.trace().re;
    let q = if tr > 0.0 && tr.is_finite() {
        TransmitCovariance(aah.scale(power_budget / tr))
    } else {
        TransmitCovariance::isotropic(m, power_budget)
    };
    let (re, im) = a.raw[split..].split_at(n);
    let theta = re
        .iter()
        .zip(im)
        .map(|(&r, &i)| {
            let z = C64::new(r, i);
            let mag = z.norm();
            if mag > 0.0 {
                z / mag
            } else {
                C64::new(1.0, 0.0)
            }
        })
        .collect();
    Ok((q, RisPhases(theta)))
}

/// Action that [`project_action`] maps back to `(q, theta)` when
/// `tr(q) = p`: the covariance is carried by its Hermitian square root,
/// scaled to unit Frobenius norm so every entry lies in `[−1, 1]`.
pub fn encode_action(q: &TransmitCovariance, theta: &RisPhases) -> Result<EnvAction> {
    let (vals, vecs) = hermitian_eig(q.matrix())?;
    let m = q.dim();
    let sqrt_vals: Vec<C64> = vals
        .iter()
        .map(|&l| C64::new(l.max(0.0).sqrt(), 0.0))
        .collect();
    let root = vecs
        .matmul(&CMatrix::from_diag(&sqrt_vals))?
        .matmul(&vecs.conj_transpose())?;
    let fro = root.frob_norm();
    let root = if fro > 0.0 {
        root.scale(1.0 / fro)
    } else {
        CMatrix::zeros(m, m)
    };
    let mut raw = complex_to_realvec(&root).into_inner();
    raw.extend(theta.iter().map(|t| t.re));
    raw.extend(theta.iter().map(|t| t.im));
    Ok(EnvAction {
        raw: RealVector(raw),
    })
}

/// Water-filling powers over channel gains `γ_i` (already divided by σ²).
///
/// Returns the per-mode powers and the water level `μ`. Modes with
/// `γ_i ≤ 0` receive nothing.
pub fn waterfill_powers(gains: &[f64], power: f64) -> Result<(Vec<f64>, f64)> {
    let max_inv = gains
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|g| 1.0 / g)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_inv.is_finite() {
        return Err(Error::ZeroChannel);
    }
    let alloc = |mu: f64| -> Vec<f64> {
        gains
            .iter()
            .map(|&g| {
                if g > 0.0 {
                    (mu - 1.0 / g).max(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let min_inv = gains
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|g| 1.0 / g)
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (min_inv, max_inv + power);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if alloc(mid).iter().sum::<f64>() > power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut p = alloc(mu);
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|x| *x *= power / total);
    }
    Ok((p, mu))
}

/// Rate-optimal covariance for a fixed composite channel.
pub fn waterfill(h_bar: &CMatrix, power: f64, sigma2: f64) -> Result<TransmitCovariance> {
    let m = h_bar.cols();
    let gram = h_bar
        .conj_transpose()
        .matmul(h_bar)?
        .scale(1.0 / sigma2)
        .hermitian_part();
    if gram.frob_norm() == 0.0 {
        return Err(Error::ZeroChannel);
    }
    let (gains, v) = hermitian_eig(&gram)?;
    // eigenvalues at rounding level carry no usable gain
    let floor = gains[0] * 1e-13;
    let gains: Vec<f64> = gains
        .iter()
        .map(|&g| if g > floor { g } else { 0.0 })
        .collect();
    let (powers, _) = waterfill_powers(&gains, power)?;
    let d: Vec<C64> = powers.iter().map(|&p| C64::new(p, 0.0)).collect();
    let q = v
        .matmul(&CMatrix::from_diag(&d))?
        .matmul(&v.conj_transpose())?
        .hermitian_part();
    debug_assert_eq!(q.rows(), m);
    Ok(TransmitCovariance(q))
}

/// Source of the composite channel for a given RIS configuration.
pub trait ChannelOracle: Send + Sync {
    fn composite(&self, theta: &RisPhases) -> Result<CMatrix>;
}

/// The actual propagation environment.
#[derive(Clone, Debug)]
pub struct TrueChannelOracle {
    pub pair: ChannelPair,
}

impl ChannelOracle for TrueChannelOracle {
    fn composite(&self, theta: &RisPhases) -> Result<CMatrix> {
        composite_channel(&self.pair, theta)
    }
}

/// Applies `action`, asks `oracle` for the channel under the new phases and
/// returns the next state with its rate, which is also the reward.
pub fn env_step(
    state: &EnvState,
    action: &EnvAction,
    oracle: &dyn ChannelOracle,
    cfg: &EnvConfig,
) -> Result<(EnvState, f64)> {
    let (q, theta) = project_action(action, state.q.dim(), state.theta.len(), cfg.power_budget_p)?;
    let h = oracle.composite(&theta)?;
    let rate = achievable_rate(&h, &q, cfg.noise_power_sigma2)?;
    let next = EnvState {
        q,
        theta,
        rate,
        ..state.clone()
    };
    Ok((next, rate))
}

/// `û = u + r·ω` with `ω` uniform on the unit sphere and fixed radius
/// `r = η · ‖center‖`, so that `E‖u − û‖ / E‖u‖ ≈ η` over the UE area.
pub fn perturb_location(u: Point3, eta_target: f64, area: &UeArea, rng: &mut RngStream) -> Point3 {
    if eta_target <= 0.0 {
        return u;
    }
    let r = eta_target * area.center.norm();
    let w = rng.unit_vector3();
    u.add(Point3::new(w[0], w[1], w[2]).scale(r))
}
