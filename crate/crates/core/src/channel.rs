//! Geometric Saleh-Valenzuela channel synthesis.
//!
//! Conventions:
//! - The RIS is a vertical uniform planar array; azimuth and elevation are
//!   measured in the global frame with no per-panel rotation.
//! - UPA element `n = n_y_idx · n_x + n_x_idx` (horizontal index fastest).
//! - Path 0 of each link is the line-of-sight segment; each scatterer adds one
//!   path whose length is the sum of its two segments and whose path loss
//!   uses that link's exponent.
//! - Departure angles point from the transmitter toward the first hop;
//!   arrival angles point from the receiver back toward the last hop.
//! - Every path carries a phase `χ` drawn uniformly from `[0, 2π)`. Phases
//!   belong to the scenario, not to a UE position: callers that want a
//!   smooth location → channel map pass a fresh copy of the same stream for
//!   every location.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{len_mismatch, Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::rng::RngStream;

/// A point in 3D space, meters. Serialized as `[x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dist(self, o: Point3) -> f64 {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        self.into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub loc_bs: Point3,
    pub loc_ris: Point3,
    pub loc_ue: Point3,
    #[serde(default)]
    pub scatterers_bs_ris: Vec<Point3>,
    #[serde(default)]
    pub scatterers_ris_ue: Vec<Point3>,
}

impl ScenarioGeometry {
    pub fn validate(&self) -> Result<()> {
        let all = [self.loc_bs, self.loc_ris, self.loc_ue]
            .into_iter()
            .chain(self.scatterers_bs_ris.iter().copied())
            .chain(self.scatterers_ris_ue.iter().copied());
        for p in all {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coordinate {p:?}"
                )));
            }
        }
        let named = [
            ("BS", self.loc_bs),
            ("RIS", self.loc_ris),
            ("UE", self.loc_ue),
        ];
        for i in 0..3 {
            for j in i + 1..3 {
                if named[i].1 == named[j].1 {
                    return Err(Error::InvalidArgument(format!(
                        "{} and {} share the location {:?}",
                        named[i].0, named[j].0, named[i].1
                    )));
                }
            }
        }
        for s in &self.scatterers_bs_ris {
            if *s == self.loc_bs || *s == self.loc_ris {
                return Err(Error::InvalidArgument(format!(
                    "BS-RIS scatterer {s:?} sits on an endpoint"
                )));
            }
        }
        for s in &self.scatterers_ris_ue {
            if *s == self.loc_ris || *s == self.loc_ue {
                return Err(Error::InvalidArgument(format!(
                    "RIS-UE scatterer {s:?} sits on an endpoint"
                )));
            }
        }
        Ok(())
    }

    pub fn with_ue(&self, loc_ue: Point3) -> ScenarioGeometry {
        ScenarioGeometry {
            loc_ue,
            ..self.clone()
        }
    }

    /// Number of BS→RIS paths `L_G`.
    pub fn paths_bs_ris(&self) -> usize {
        1 + self.scatterers_bs_ris.len()
    }

    /// Number of RIS→UE paths `L_D`.
    pub fn paths_ris_ue(&self) -> usize {
        1 + self.scatterers_ris_ue.len()
    }
}

/// Circular UE movement area in the horizontal plane through `center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeArea {
    pub center: Point3,
    pub radius: f64,
}

impl UeArea {
    /// Uniform draw over the disc.
    pub fn sample(&self, rng: &mut RngStream) -> Point3 {
        let r = self.radius * rng.uniform().sqrt();
        let a = 2.0 * PI * rng.uniform();
        Point3::new(
            self.center.x + r * a.cos(),
            self.center.y + r * a.sin(),
            self.center.z,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_bs: usize,
    pub k_ue: usize,
    pub n_x: usize,
    pub n_y: usize,
}

impl ArrayConfig {
    pub fn new(m_bs: usize, k_ue: usize, n_x: usize, n_y: usize) -> Result<Self> {
        let a = ArrayConfig {
            m_bs,
            k_ue,
            n_x,
            n_y,
        };
        a.validate()?;
        Ok(a)
    }

    /// Picks the most square `n_x × n_y` factorization of `n`, `n_x ≥ n_y`.
    pub fn with_ris_elements(m_bs: usize, k_ue: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "RIS needs at least one element".into(),
            ));
        }
        let n_y = (1..=n)
            .filter(|d| n.is_multiple_of(*d) && d * d <= n)
            .max()
            .unwrap_or(1);
        Self::new(m_bs, k_ue, n / n_y, n_y)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_bs == 0 || self.k_ue == 0 || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::InvalidArgument(format!(
                "array sizes must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// RIS element count `N = n_x · n_y`.
    pub fn n(&self) -> usize {
        self.n_x * self.n_y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossConfig {
    pub c0_db: f64,
    pub alpha_bs_ris: f64,
    pub alpha_ris_ue: f64,
}

impl PathLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_bs_ris > 0.0 && self.alpha_ris_ue > 0.0) {
            return Err(Error::InvalidArgument(
                "path-loss exponents must be positive".into(),
            ));
        }
        if !self.c0_db.is_finite() {
            return Err(Error::InvalidArgument("c0_db must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleSet {
    /// ψ ∈ (−π, π]
    pub azimuth: f64,
    /// φ ∈ [−π/2, π/2]
    pub elevation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPair {
    /// BS → RIS, `N × M`.
    pub g: CMatrix,
    /// RIS → UE, `K × N`.
    pub h_r: CMatrix,
}

/// ULA response `a_L(φ)`, entry `n` is `e^{jπ n sin φ} / √n_l`.
pub fn ula_steering(phi: f64, n_l: usize) -> CMatrix {
    assert!(n_l >= 1, "ULA needs at least one element");
    let norm = 1.0 / (n_l as f64).sqrt();
    let s = phi.sin();
    CMatrix::column(
        (0..n_l)
            .map(|n| C64::from_polar(norm, PI * n as f64 * s))
            .collect(),
    )
}

/// UPA response `a_P(ψ, φ)` with horizontal index fastest.
pub fn upa_steering(psi: f64, phi: f64, n_x: usize, n_y: usize) -> CMatrix {
    assert!(
        n_x >= 1 && n_y >= 1,
        "UPA needs at least one element per axis"
    );
    let norm = 1.0 / ((n_x * n_y) as f64).sqrt();
    let hx = psi.sin() * phi.cos();
    let vy = phi.sin();
    let mut v = Vec::with_capacity(n_x * n_y);
    for iy in 0..n_y {
        for ix in 0..n_x {
            v.push(C64::from_polar(
                norm,
                PI * (ix as f64 * hx + iy as f64 * vy),
            ));
        }
    }
    CMatrix::column(v)
}

pub fn angles_between(from: Point3, to: Point3) -> Result<AngleSet> {
    let d = to.sub(from);
    let r = d.norm();
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coincident points {from:?}"
        )));
    }
    let mut azimuth = d.y.atan2(d.x);
    if azimuth <= -PI {
        azimuth = PI;
    }
    let elevation = (d.z / r).clamp(-1.0, 1.0).asin();
    Ok(AngleSet { azimuth, elevation })
}

/// `10^(C₀/10) · d^{−α}`.
pub fn path_loss_linear(d: f64, alpha: f64, cfg: &PathLossConfig) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {d}"
        )));
    }
    Ok(10f64.powf(cfg.c0_db / 10.0) * d.powf(-alpha))
}

/// Per-path phases `χ`, one per path of each link, in path order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPhases {
    pub bs_ris: Vec<f64>,
    pub ris_ue: Vec<f64>,
}

impl PathPhases {
    pub fn draw(geom: &ScenarioGeometry, rng: &mut RngStream) -> PathPhases {
        let bs_ris = (0..geom.paths_bs_ris())
            .map(|_| 2.0 * PI * rng.uniform())
            .collect();
        let ris_ue = (0..geom.paths_ris_ue())
            .map(|_| 2.0 * PI * rng.uniform())
            .collect();
        PathPhases { bs_ris, ris_ue }
    }
}

/// Rank-one contributions of every path, before summation.
#[derive(Clone, Debug)]
pub struct ChannelPaths {
    pub g_paths: Vec<CMatrix>,
    pub h_r_paths: Vec<CMatrix>,
}

impl ChannelPaths {
    pub fn sum(&self) -> ChannelPair {
        fn total(ms: &[CMatrix]) -> CMatrix {
            ms.iter()
                .skip(1)
                .fold(ms[0].clone(), |acc, m| acc.add(m).expect("same shape"))
        }
        ChannelPair {
            g: total(&self.g_paths),
            h_r: total(&self.h_r_paths),
        }
    }
}

/// Outer product `u vᴴ` of two column vectors.
fn outer(u: &CMatrix, v: &CMatrix) -> CMatrix {
    CMatrix::from_fn(u.rows(), v.rows(), |i, j| u[(i, 0)] * v[(j, 0)].conj())
}

pub fn channel_paths(
    geom: &ScenarioGeometry,
    arrays: &ArrayConfig,
    pl: &PathLossConfig,
    phases: &PathPhases,
) -> Result<ChannelPaths> {
    geom.validate()?;
    arrays.validate()?;
    pl.validate()?;
    if phases.bs_ris.len() != geom.paths_bs_ris() {
        return Err(len_mismatch(
            "BS-RIS path phases",
            geom.paths_bs_ris(),
            phases.bs_ris.len(),
        ));
    }
    if phases.ris_ue.len() != geom.paths_ris_ue() {
        return Err(len_mismatch(
            "RIS-UE path phases",
            geom.paths_ris_ue(),
            phases.ris_ue.len(),
        ));
    }
    let (m, k, n) = (arrays.m_bs, arrays.k_ue, arrays.n());

    let l_g = geom.paths_bs_ris() as f64;
    let g_scale = ((m * n) as f64 / l_g).sqrt();
    let mut g_paths = Vec::with_capacity(geom.paths_bs_ris());
    let hops = std::iter::once(None).chain(geom.scatterers_bs_ris.iter().copied().map(Some));
    for (hop, chi) in hops.zip(&phases.bs_ris) {
        let (first, last, d) = match hop {
            None => (geom.loc_ris, geom.loc_bs, geom.loc_bs.dist(geom.loc_ris)),
            Some(s) => (s, s, geom.loc_bs.dist(s) + s.dist(geom.loc_ris)),
        };
        let dep = angles_between(geom.loc_bs, first)?;
        let arr = angles_between(geom.loc_ris, last)?;
        let gain = C64::from_polar(
            g_scale * path_loss_linear(d, pl.alpha_bs_ris, pl)?.sqrt(),
            *chi,
        );
        let a_p = upa_steering(arr.azimuth, arr.elevation, arrays.n_x, arrays.n_y);
        let a_l = ula_steering(dep.elevation, m);
        g_paths.push(outer(&a_p, &a_l).scale_c(gain));
    }

    let l_d = geom.paths_ris_ue() as f64;
    let h_scale = ((n * k) as f64 / l_d).sqrt();
    let mut h_r_paths = Vec::with_capacity(geom.paths_ris_ue());
    let hops = std::iter::once(None).chain(geom.scatterers_ris_ue.iter().copied().map(Some));
    for (hop, chi) in hops.zip(&phases.ris_ue) {
        let (first, last, d) = match hop {
            None => (geom.loc_ue, geom.loc_ris, geom.loc_ris.dist(geom.loc_ue)),
            Some(s) => (s, s, geom.loc_ris.dist(s) + s.dist(geom.loc_ue)),
        };
        let dep = angles_between(geom.loc_ris, first)?;
        let arr = angles_between(geom.loc_ue, last)?;
        let gain = C64::from_polar(
            h_scale * path_loss_linear(d, pl.alpha_ris_ue, pl)?.sqrt(),
            *chi,
        );
        let a_l = ula_steering(arr.elevation, k);
        let a_p = upa_steering(dep.azimuth, dep.elevation, arrays.n_x, arrays.n_y);
        h_r_paths.push(outer(&a_l, &a_p).scale_c(gain));
    }
    Ok(ChannelPaths { g_paths, h_r_paths })
}

/// Draws path phases from `rng` and synthesizes `(G, H_r)`.
pub fn synthesize_channels(
    geom: &ScenarioGeometry,
    arrays: &ArrayConfig,
    pl: &PathLossConfig,
    rng: &mut RngStream,
) -> Result<ChannelPair> {
    let phases = PathPhases::draw(geom, rng);
    synthesize_with_phases(geom, arrays, pl, &phases)
}

pub fn synthesize_with_phases(
    geom: &ScenarioGeometry,
    arrays: &ArrayConfig,
    pl: &PathLossConfig,
    phases: &PathPhases,
) -> Result<ChannelPair> {
    Ok(channel_paths(geom, arrays, pl, phases)?.sum())
}

/// Composite channel `H_r · diag(θ) · G`.
pub fn composite_channel(pair: &ChannelPair, theta: &[C64]) -> Result<CMatrix> {
    if let Some((i, t)) = theta
        .iter()
        .enumerate()
        .find(|(_, t)| (t.norm() - 1.0).abs() > 1e-9)
    {
        return Err(Error::InvalidArgument(format!(
            "theta[{i}] = {t} is not unit modulus"
        )));
    }
    composite_unchecked(&pair.h_r, theta, &pair.g)
}

/// `h_r · diag(theta) · g` without the unit-modulus check.
pub fn composite_unchecked(h_r: &CMatrix, theta: &[C64], g: &CMatrix) -> Result<CMatrix> {
    h_r.mul_diag_right(theta)?.matmul(g)
}

/// Axis-aligned box mapping coordinates to `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordNormalizer {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl CoordNormalizer {
    /// Identity-like normalizer that leaves coordinates untouched.
    pub fn identity() -> Self {
        CoordNormalizer {
            lo: [-1.0; 3],
            hi: [1.0; 3],
        }
    }

    /// Bounding box of the scenario: BS, RIS, the whole UE disc and every
    /// scatterer.
    pub fn for_scenario(geom: &ScenarioGeometry, area: &UeArea) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let r = area.radius;
        let pts = [
            geom.loc_bs,
            geom.loc_ris,
            area.center.add(Point3::new(r, r, 0.0)),
            area.center.add(Point3::new(-r, -r, 0.0)),
        ];
        let all = pts
            .into_iter()
            .chain(geom.scatterers_bs_ris.iter().copied())
            .chain(geom.scatterers_ris_ue.iter().copied());
        for p in all {
            for (a, v) in p.to_array().into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        CoordNormalizer { lo, hi }
    }

    pub fn apply(&self, p: Point3) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (a, v) in p.to_array().into_iter().enumerate() {
            let span = self.hi[a] - self.lo[a];
            out[a] = if span > 0.0 {
                2.0 * (v - self.lo[a]) / span - 1.0
            } else {
                v - self.lo[a]
            };
        }
        out
    }
}

/// Writes per-path contributions as CSV: `link,path,row,col,re,im`.
pub fn write_channel_fixture<W: Write>(paths: &ChannelPaths, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["link", "path", "row", "col", "re", "im"])?;
    for (link, mats) in [("G", &paths.g_paths), ("H_r", &paths.h_r_paths)] {
        for (p, m) in mats.iter().enumerate() {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let z = m[(i, j)];
                    wr.write_record([
                        link.to_string(),
                        p.to_string(),
                        i.to_string(),
                        j.to_string(),
                        format!("{:e}", z.re),
                        format!("{:e}", z.im),
                    ])?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a channel fixture back into per-path matrices.
pub fn read_channel_fixture<R: Read>(r: R, arrays: &ArrayConfig) -> Result<ChannelPaths> {
    #[derive(Deserialize)]
    struct Row {
        link: String,
        path: usize,
        row: usize,
        col: usize,
        re: f64,
        im: f64,
    }
    let (m, k, n) = (arrays.m_bs, arrays.k_ue, arrays.n());
    let mut g_paths: Vec<CMatrix> = Vec::new();
    let mut h_r_paths: Vec<CMatrix> = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        let row: Row = rec?;
        let (mats, shape) = match row.link.as_str() {
            "G" => (&mut g_paths, (n, m)),
            "H_r" => (&mut h_r_paths, (k, n)),
            other => return Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        };
        if row.row >= shape.0 || row.col >= shape.1 {
            return Err(Error::InvalidArgument(format!(
                "entry ({}, {}) outside {}x{}",
                row.row, row.col, shape.0, shape.1
            )));
        }
        while mats.len() <= row.path {
            mats.push(CMatrix::zeros(shape.0, shape.1));
        }
        mats[row.path][(row.row, row.col)] = C64::new(row.re, row.im);
    }
    if g_paths.is_empty() || h_r_paths.is_empty() {
        return Err(Error::InvalidArgument("fixture is missing a link".into()));
    }
    Ok(ChannelPaths { g_paths, h_r_paths })
}
