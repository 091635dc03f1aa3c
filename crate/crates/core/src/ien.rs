//! Imitation environment network (IEN).
//!
//! Two MLPs map device coordinates to channel estimates: the BS-RIS net sees
//! `(BS, RIS)` and emits `Ĝ`, the RIS-UE net sees `(RIS, UE)` and emits
//! `Ĥ_r`. Only their composition `Ĥ = Ĥ_r Θ Ĝ` is ever compared against
//! data, so the individual factors are free to drift by any invertible
//! diagonal rescaling.
//!
//! Coordinates are min-max normalized to `[−1, 1]` over the scenario box and
//! channels are expressed in units of `label_scale` (the RMS entry magnitude
//! of the training labels). Both constants live in the model and its
//! checkpoint. The training loss and every reported MSE are computed in those
//! normalized channel units.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    composite_channel, composite_unchecked, synthesize_with_phases, ArrayConfig, CoordNormalizer,
    PathLossConfig, PathPhases, Point3, ScenarioGeometry, UeArea,
};
use crate::env::{achievable_rate, ChannelOracle, RisPhases, TransmitCovariance};
use crate::error::{len_mismatch, Error, Result};
use crate::linalg::{complex_to_realvec, realvec_to_complex, CMatrix, C64};
use crate::mlp::{
    hex_f64, parse_tagged, read_hex_row, ActivationKind, CheckpointLines, Mlp, SgdConfig,
};
use crate::rng::RngStream;

/// Hidden widths of both IEN sub-networks.
pub const IEN_HIDDEN: [usize; 2] = [128, 64];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceLocations {
    pub bs: Point3,
    pub ris: Point3,
    pub ue: Point3,
}

impl From<&ScenarioGeometry> for DeviceLocations {
    fn from(g: &ScenarioGeometry) -> Self {
        DeviceLocations {
            bs: g.loc_bs,
            ris: g.loc_ris,
            ue: g.loc_ue,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IenModel {
    pub bs_ris_net: Mlp,
    pub ris_ue_net: Mlp,
    pub arrays: ArrayConfig,
    pub normalizer: CoordNormalizer,
    pub label_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IenPrediction {
    pub g_hat: CMatrix,
    pub h_r_hat: CMatrix,
    pub h_hat: CMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IenSample {
    pub loc_bs: Point3,
    pub loc_ris: Point3,
    pub loc_ue: Point3,
    pub theta: RisPhases,
    /// Composite channel `H̄` (`K × M`).
    pub label: CMatrix,
}

impl IenSample {
    pub fn locations(&self) -> DeviceLocations {
        DeviceLocations {
            bs: self.loc_bs,
            ris: self.loc_ris,
            ue: self.loc_ue,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IenDatasetConfig {
    /// Number of historic UE locations `U`.
    pub u_locations: usize,
    /// Random RIS configurations per location `F`.
    pub f_thetas_per_location: usize,
    /// Label noise std relative to each label's RMS entry magnitude.
    #[serde(default)]
    pub label_noise_std: f64,
    pub rng_seed: u64,
}

impl IenDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.u_locations == 0 || self.f_thetas_per_location == 0 {
            return Err(Error::InvalidArgument(
                "IEN dataset needs U >= 1 and F >= 1".into(),
            ));
        }
        if !(self.label_noise_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "label_noise_std must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IenTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

fn net_input(norm: &CoordNormalizer, a: Point3, b: Point3) -> [f64; 6] {
    let a = norm.apply(a);
    let b = norm.apply(b);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

impl IenModel {
    pub fn new(
        arrays: ArrayConfig,
        normalizer: CoordNormalizer,
        label_scale: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        arrays.validate()?;
        if !(label_scale > 0.0) || !label_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "label scale must be positive, got {label_scale}"
            )));
        }
        let (m, k, n) = (arrays.m_bs, arrays.k_ue, arrays.n());
        let acts = [
            ActivationKind::Tanh,
            ActivationKind::Tanh,
            ActivationKind::Linear,
        ];
        let bs_ris_net = Mlp::init(
            &[6, IEN_HIDDEN[0], IEN_HIDDEN[1], 2 * m * n],
            &acts,
            &mut rng.split("bs-ris"),
        )?;
        let ris_ue_net = Mlp::init(
            &[6, IEN_HIDDEN[0], IEN_HIDDEN[1], 2 * k * n],
            &acts,
            &mut rng.split("ris-ue"),
        )?;
        Ok(IenModel {
            bs_ris_net,
            ris_ue_net,
            arrays,
            normalizer,
            label_scale,
        })
    }

    fn check_dims(&self) -> Result<()> {
        let (m, k, n) = (self.arrays.m_bs, self.arrays.k_ue, self.arrays.n());
        let ok = self.bs_ris_net.dims() == [6, IEN_HIDDEN[0], IEN_HIDDEN[1], 2 * m * n]
            && self.ris_ue_net.dims() == [6, IEN_HIDDEN[0], IEN_HIDDEN[1], 2 * k * n];
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "IenModel",
                left: format!(
                    "{:?} / {:?}",
                    self.bs_ris_net.dims(),
                    self.ris_ue_net.dims()
                ),
                right: format!("{:?}", self.arrays),
            });
        }
        Ok(())
    }

    fn inputs(&self, locs: &DeviceLocations) -> ([f64; 6], [f64; 6]) {
        (
            net_input(&self.normalizer, locs.bs, locs.ris),
            net_input(&self.normalizer, locs.ris, locs.ue),
        )
    }

    /// Normalized factors `(Ĝ', Ĥ_r')`; physical values are `√c` times these.
    fn factors(&self, locs: &DeviceLocations) -> Result<(CMatrix, CMatrix)> {
        self.check_dims()?;
        let (m, k, n) = (self.arrays.m_bs, self.arrays.k_ue, self.arrays.n());
        let (in_br, in_ru) = self.inputs(locs);
        let g = realvec_to_complex(&self.bs_ris_net.predict(&in_br)?, n, m)?;
        let h = realvec_to_complex(&self.ris_ue_net.predict(&in_ru)?, k, n)?;
        Ok((g, h))
    }

    /// Squared Frobenius error of one sample in normalized channel units.
    pub fn sample_loss(&self, sample: &IenSample) -> Result<f64> {
        let (g, h) = self.factors(&sample.locations())?;
        let pred = composite_unchecked(&h, &sample.theta, &g)?;
        let target = sample.label.scale(1.0 / self.label_scale);
        Ok(pred.sub(&target)?.frob_norm_sq())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let a = &self.arrays;
        writeln!(s, "ien 1").unwrap();
        writeln!(s, "arrays {} {} {} {}", a.m_bs, a.k_ue, a.n_x, a.n_y).unwrap();
        s.push_str("norm");
        for v in self.normalizer.lo.iter().chain(&self.normalizer.hi) {
            write!(s, " {:016x}", v.to_bits()).unwrap();
        }
        writeln!(s, "\nscale {:016x}", self.label_scale.to_bits()).unwrap();
        s.push_str(&self.bs_ris_net.to_checkpoint());
        s.push_str(&self.ris_ue_net.to_checkpoint());
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = CheckpointLines::new(text);
        let (ln, head) = lines.next_line()?;
        let version: u32 = parse_tagged(ln, head, "ien")?;
        if version != 1 {
            return Err(lines.error(ln, "unsupported IEN checkpoint version"));
        }
        let (ln, arr) = lines.next_line()?;
        let dims: Vec<usize> = arr
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.error(ln, "bad arrays line"))?;
        if !arr.starts_with("arrays") || dims.len() != 4 {
            return Err(lines.error(ln, "expected `arrays m k n_x n_y`"));
        }
        let arrays = ArrayConfig::new(dims[0], dims[1], dims[2], dims[3])?;
        let norm = read_hex_row(&mut lines, "norm", 6)?;
        let (ln, sc) = lines.next_line()?;
        let label_scale = sc
            .strip_prefix("scale ")
            .and_then(|t| hex_f64(t.trim()))
            .ok_or_else(|| lines.error(ln, "expected `scale`"))?;
        let bs_ris_net = Mlp::read_checkpoint(&mut lines)?;
        let ris_ue_net = Mlp::read_checkpoint(&mut lines)?;
        let model = IenModel {
            bs_ris_net,
            ris_ue_net,
            arrays,
            normalizer: CoordNormalizer {
                lo: [norm[0], norm[1], norm[2]],
                hi: [norm[3], norm[4], norm[5]],
            },
            label_scale,
        };
        model.check_dims()?;
        Ok(model)
    }
}

/// Predicted `(Ĝ, Ĥ_r, Ĥ)` in physical channel units.
pub fn ien_predict(
    model: &IenModel,
    locs: &DeviceLocations,
    theta: &RisPhases,
) -> Result<IenPrediction> {
    if theta.len() != model.arrays.n() {
        return Err(len_mismatch(
            "ien_predict theta",
            model.arrays.n(),
            theta.len(),
        ));
    }
    let (g, h) = model.factors(locs)?;
    let root = model.label_scale.sqrt();
    let g_hat = g.scale(root);
    let h_r_hat = h.scale(root);
    let h_hat = composite_unchecked(&h_r_hat, theta, &g_hat)?;
    Ok(IenPrediction {
        g_hat,
        h_r_hat,
        h_hat,
    })
}

/// `(1/V) Σ ‖Ĥ_v − H̄_v‖_F²`.
pub fn ien_mse(h_hats: &[CMatrix], labels: &[CMatrix]) -> Result<f64> {
    if h_hats.len() != labels.len() {
        return Err(len_mismatch("ien_mse", h_hats.len(), labels.len()));
    }
    if h_hats.is_empty() {
        return Err(Error::InvalidArgument("ien_mse on an empty batch".into()));
    }
    let mut acc = 0.0;
    for (h, l) in h_hats.iter().zip(labels) {
        acc += h.sub(l)?.frob_norm_sq();
    }
    Ok(acc / h_hats.len() as f64)
}

/// Gradients of the two composite-channel factors for `‖Ĥ_r Θ Ĝ − Y‖_F²`.
///
/// With `E = Ĥ_r Θ Ĝ − Y`, the real-parameter gradients packed as complex
/// matrices are `2 E (ΘĜ)ᴴ` for `Ĥ_r` and `2 (Ĥ_r Θ)ᴴ E` for `Ĝ`.
pub fn composite_factor_grads(
    h_r: &CMatrix,
    theta: &[C64],
    g: &CMatrix,
    target: &CMatrix,
) -> Result<(CMatrix, CMatrix, f64)> {
    let theta_g = g.mul_diag_left(theta)?;
    let h_theta = h_r.mul_diag_right(theta)?;
    let err = h_theta.matmul(g)?.sub(target)?;
    let grad_h = err.matmul(&theta_g.conj_transpose())?.scale(2.0);
    let grad_g = h_theta.conj_transpose().matmul(&err)?.scale(2.0);
    Ok((grad_h, grad_g, err.frob_norm_sq()))
}

/// Parameter gradients of one sample's loss for both sub-networks.
pub fn ien_backward(
    model: &IenModel,
    sample: &IenSample,
) -> Result<(crate::mlp::MlpGrads, crate::mlp::MlpGrads)> {
    let batch = [sample];
    let (gb, gu, _) = batch_grads(model, &batch, 1.0)?;
    Ok((gb, gu))
}

/// Gradients of `weight · Σ_v loss_v` over a batch, plus the summed loss.
fn batch_grads(
    model: &IenModel,
    batch: &[&IenSample],
    weight: f64,
) -> Result<(crate::mlp::MlpGrads, crate::mlp::MlpGrads, f64)> {
    model.check_dims()?;
    let (m, k, n) = (model.arrays.m_bs, model.arrays.k_ue, model.arrays.n());
    let v = batch.len();
    let mut in_br = Array2::zeros((v, 6));
    let mut in_ru = Array2::zeros((v, 6));
    for (r, s) in batch.iter().enumerate() {
        let (a, b) = model.inputs(&s.locations());
        in_br.row_mut(r).assign(&ndarray::ArrayView1::from(&a));
        in_ru.row_mut(r).assign(&ndarray::ArrayView1::from(&b));
    }
    let (out_br, tape_br) = model.bs_ris_net.forward_batch(in_br.view())?;
    let (out_ru, tape_ru) = model.ris_ue_net.forward_batch(in_ru.view())?;
    let mut d_br = Array2::zeros(out_br.raw_dim());
    let mut d_ru = Array2::zeros(out_ru.raw_dim());
    let inv_scale = 1.0 / model.label_scale;
    let mut loss = 0.0;
    for (r, s) in batch.iter().enumerate() {
        if s.theta.len() != n || s.label.shape() != (k, m) {
            return Err(len_mismatch("IEN sample", n, s.theta.len()));
        }
        let g = realvec_to_complex(out_br.row(r).as_slice().unwrap(), n, m)?;
        let h = realvec_to_complex(out_ru.row(r).as_slice().unwrap(), k, n)?;
        let target = s.label.scale(inv_scale);
        let (grad_h, grad_g, l) = composite_factor_grads(&h, &s.theta, &g, &target)?;
        loss += l;
        for (d, x) in d_br
            .row_mut(r)
            .iter_mut()
            .zip(complex_to_realvec(&grad_g).iter())
        {
            *d = weight * x;
        }
        for (d, x) in d_ru
            .row_mut(r)
            .iter_mut()
            .zip(complex_to_realvec(&grad_h).iter())
        {
            *d = weight * x;
        }
    }
    let (gb, _) = model.bs_ris_net.backward_batch(&tape_br, d_br.view())?;
    let (gu, _) = model.ris_ue_net.backward_batch(&tape_ru, d_ru.view())?;
    Ok((gb, gu, loss))
}

/// Mean normalized squared error over a dataset.
pub fn dataset_mse(model: &IenModel, data: &[IenSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut acc = 0.0;
    for chunk in data.chunks(256) {
        let refs: Vec<&IenSample> = chunk.iter().collect();
        acc += predict_loss_sum(model, &refs)?;
    }
    Ok(acc / data.len() as f64)
}

fn predict_loss_sum(model: &IenModel, batch: &[&IenSample]) -> Result<f64> {
    let (m, k, n) = (model.arrays.m_bs, model.arrays.k_ue, model.arrays.n());
    let v = batch.len();
    let mut in_br = Array2::zeros((v, 6));
    let mut in_ru = Array2::zeros((v, 6));
    for (r, s) in batch.iter().enumerate() {
        let (a, b) = model.inputs(&s.locations());
        in_br.row_mut(r).assign(&ndarray::ArrayView1::from(&a));
        in_ru.row_mut(r).assign(&ndarray::ArrayView1::from(&b));
    }
    let out_br = model.bs_ris_net.predict_batch(in_br.view())?;
    let out_ru = model.ris_ue_net.predict_batch(in_ru.view())?;
    let mut acc = 0.0;
    for (r, s) in batch.iter().enumerate() {
        let g = realvec_to_complex(out_br.row(r).as_slice().unwrap(), n, m)?;
        let h = realvec_to_complex(out_ru.row(r).as_slice().unwrap(), k, n)?;
        let pred = composite_unchecked(&h, &s.theta, &g)?;
        acc += pred
            .sub(&s.label.scale(1.0 / model.label_scale))?
            .frob_norm_sq();
    }
    Ok(acc)
}

/// Mini-batch SGD on the composite-channel MSE.
///
/// Each epoch shuffles the dataset with a seeded stream and sweeps it in
/// batches of `batch_size`. The returned trace holds the training-set MSE
/// after every epoch.
pub fn train_ien(
    mut model: IenModel,
    data: &[IenSample],
    cfg: &IenTrainConfig,
) -> Result<(IenModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let sgd = SgdConfig::new(cfg.learning_rate)?;
    let mut rng = RngStream::new(cfg.shuffle_seed).split("ien-shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&IenSample> = idx.iter().map(|&i| &data[i]).collect();
            let (gb, gu, _) = batch_grads(&model, &batch, 1.0 / batch.len() as f64)?;
            model.bs_ris_net.sgd_step(&gb, &sgd);
            model.ris_ue_net.sgd_step(&gu, &sgd);
        }
        trace.push(dataset_mse(&model, data)?);
    }
    Ok((model, trace))
}

/// `R̂ = log₂ det(I + Ĥ Q Ĥᴴ / σ²)`.
pub fn ien_predicted_rate(
    model: &IenModel,
    locs: &DeviceLocations,
    theta: &RisPhases,
    q: &TransmitCovariance,
    sigma2: f64,
) -> Result<f64> {
    let pred = ien_predict(model, locs, theta)?;
    achievable_rate(&pred.h_hat, q, sigma2)
}

/// Draws the training set: `U` UE positions uniformly over `area`, `F`
/// random RIS configurations each, labelled with the true composite channel.
///
/// `scenario_rng` fixes the per-path phases of the scenario; every location
/// sees the same phases.
pub fn generate_ien_dataset(
    geom_base: &ScenarioGeometry,
    area: &UeArea,
    arrays: &ArrayConfig,
    pl: &PathLossConfig,
    cfg: &IenDatasetConfig,
    scenario_rng: &RngStream,
) -> Result<Vec<IenSample>> {
    cfg.validate()?;
    let phases = PathPhases::draw(geom_base, &mut scenario_rng.clone());
    let root = RngStream::new(cfg.rng_seed);
    let per_location: Vec<Result<Vec<IenSample>>> = (0..cfg.u_locations)
        .into_par_iter()
        .map(|u| {
            let mut rng = root.split_indexed("ien-location", u as u64);
            let geom = geom_base.with_ue(area.sample(&mut rng));
            let pair = synthesize_with_phases(&geom, arrays, pl, &phases)?;
            let mut noise_rng = rng.split("label-noise");
            (0..cfg.f_thetas_per_location)
                .map(|_| {
                    let theta = RisPhases::random(arrays.n(), &mut rng);
                    let mut label = composite_channel(&pair, &theta)?;
                    if cfg.label_noise_std > 0.0 {
                        let rms =
                            (label.frob_norm_sq() / (label.rows() * label.cols()) as f64).sqrt();
                        let sd = cfg.label_noise_std * rms / 2f64.sqrt();
                        for z in label.as_mut_slice() {
                            *z += C64::new(sd * noise_rng.gaussian(), sd * noise_rng.gaussian());
                        }
                    }
                    Ok(IenSample {
                        loc_bs: geom.loc_bs,
                        loc_ris: geom.loc_ris,
                        loc_ue: geom.loc_ue,
                        theta,
                        label,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.u_locations * cfg.f_thetas_per_location);
    for chunk in per_location {
        out.extend(chunk?);
    }
    Ok(out)
}

/// RMS entry magnitude of the labels.
pub fn label_rms(data: &[IenSample]) -> f64 {
    let (sum, count) = data.iter().fold((0.0, 0usize), |(s, c), d| {
        (
            s + d.label.frob_norm_sq(),
            c + d.label.rows() * d.label.cols(),
        )
    });
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// IEN used as the environment: `Ĝ` and `Ĥ_r` are evaluated once for the
/// given device locations, so each query costs one composite product.
#[derive(Clone, Debug)]
pub struct IenOracle {
    pub model: Arc<IenModel>,
    pub locations: DeviceLocations,
    g_hat: CMatrix,
    h_r_hat: CMatrix,
}

impl IenOracle {
    pub fn new(model: Arc<IenModel>, locations: DeviceLocations) -> Result<Self> {
        let pred = ien_predict(&model, &locations, &RisPhases::ones(model.arrays.n()))?;
        Ok(IenOracle {
            model,
            locations,
            g_hat: pred.g_hat,
            h_r_hat: pred.h_r_hat,
        })
    }
}

impl ChannelOracle for IenOracle {
    fn composite(&self, theta: &RisPhases) -> Result<CMatrix> {
        composite_unchecked(&self.h_r_hat, theta, &self.g_hat)
    }
}

/// Writes the dataset as CSV: `sample`, the nine coordinates, `θ` as
/// `theta_re_n`/`theta_im_n`, and the label column-major as
/// `label_re_i_j`/`label_im_i_j`.
pub fn write_dataset_csv<W: Write>(data: &[IenSample], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = data.first() else {
        wr.flush()?;
        return Ok(());
    };
    let n = first.theta.len();
    let (k, m) = first.label.shape();
    let mut header: Vec<String> = [
        "sample", "bs_x", "bs_y", "bs_z", "ris_x", "ris_y", "ris_z", "ue_x", "ue_y", "ue_z",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n).map(|i| format!("theta_re_{i}")));
    header.extend((0..n).map(|i| format!("theta_im_{i}")));
    for part in ["re", "im"] {
        for j in 0..m {
            for i in 0..k {
                header.push(format!("label_{part}_{i}_{j}"));
            }
        }
    }
    wr.write_record(&header)?;
    for (id, s) in data.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        for p in [s.loc_bs, s.loc_ris, s.loc_ue] {
            rec.extend(p.to_array().iter().map(|v| v.to_string()));
        }
        rec.extend(s.theta.iter().map(|t| t.re.to_string()));
        rec.extend(s.theta.iter().map(|t| t.im.to_string()));
        rec.extend(complex_to_realvec(&s.label).iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(r: R, arrays: &ArrayConfig) -> Result<Vec<IenSample>> {
    let (m, k, n) = (arrays.m_bs, arrays.k_ue, arrays.n());
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let width = 10 + 2 * n + 2 * k * m;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(len_mismatch("IEN dataset row", width, rec.len()));
        }
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad number in dataset: {e}")))?;
        let pt = |i: usize| Point3::new(vals[i], vals[i + 1], vals[i + 2]);
        let theta: Vec<C64> = (0..n)
            .map(|i| C64::new(vals[9 + i], vals[9 + n + i]))
            .collect();
        let label = realvec_to_complex(&vals[9 + 2 * n..], k, m)?;
        out.push(IenSample {
            loc_bs: pt(0),
            loc_ris: pt(3),
            loc_ue: pt(6),
            theta: RisPhases::new(theta)?,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize_channels;

    fn geometry() -> ScenarioGeometry {
        ScenarioGeometry {
            loc_bs: Point3::new(20.0, 0.0, 10.0),
            loc_ris: Point3::new(0.0, 30.0, 20.0),
            loc_ue: Point3::new(10.0, 50.0, 0.0),
            scatterers_bs_ris: vec![],
            scatterers_ris_ue: vec![Point3::new(5.0, 40.0, 10.0), Point3::new(5.0, 45.0, 5.0)],
        }
    }

    fn area() -> UeArea {
        UeArea {
            center: Point3::new(10.0, 50.0, 0.0),
            radius: 5.0,
        }
    }

    fn pl() -> PathLossConfig {
        PathLossConfig {
            c0_db: -20.0,
            alpha_bs_ris: 2.0,
            alpha_ris_ue: 2.8,
        }
    }

    fn tiny_model(seed: u64) -> IenModel {
        let arrays = ArrayConfig::new(2, 2, 2, 1).unwrap();
        let norm = CoordNormalizer::for_scenario(&geometry(), &area());
        IenModel::new(arrays, norm, 1.0, &mut RngStream::new(seed)).unwrap()
    }

    fn random_sample(model: &IenModel, rng: &mut RngStream) -> IenSample {
        let (m, k, n) = (model.arrays.m_bs, model.arrays.k_ue, model.arrays.n());
        IenSample {
            loc_bs: geometry().loc_bs,
            loc_ris: geometry().loc_ris,
            loc_ue: area().sample(rng),
            theta: RisPhases::random(n, rng),
            label: CMatrix::from_fn(k, m, |_, _| C64::new(rng.gaussian(), rng.gaussian())),
        }
    }

    #[test]
    fn architecture_matches_contract() {
        let arrays = ArrayConfig::new(4, 3, 3, 2).unwrap();
        let model = IenModel::new(
            arrays,
            CoordNormalizer::identity(),
            1.0,
            &mut RngStream::new(1),
        )
        .unwrap();
        assert_eq!(model.bs_ris_net.dims(), vec![6, 128, 64, 2 * 4 * 6]);
        assert_eq!(model.ris_ue_net.dims(), vec![6, 128, 64, 2 * 3 * 6]);
        use ActivationKind::*;
        assert_eq!(model.bs_ris_net.activations(), vec![Tanh, Tanh, Linear]);
        assert_eq!(model.ris_ue_net.activations(), vec![Tanh, Tanh, Linear]);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let mut model = tiny_model(2);
        model.bs_ris_net = model.bs_ris_net.zeroed();
        model.ris_ue_net = model.ris_ue_net.zeroed();
        let pred = ien_predict(&model, &(&geometry()).into(), &RisPhases::ones(2)).unwrap();
        assert_eq!(pred.g_hat.frob_norm(), 0.0);
        assert_eq!(pred.h_r_hat.frob_norm(), 0.0);
        assert_eq!(pred.h_hat.frob_norm(), 0.0);
        let q = TransmitCovariance::isotropic(2, 1.0);
        let r = ien_predicted_rate(&model, &(&geometry()).into(), &RisPhases::ones(2), &q, 1.0)
            .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn prediction_shapes_and_composition() {
        let model = tiny_model(3);
        let locs: DeviceLocations = (&geometry()).into();
        let pred = ien_predict(&model, &locs, &RisPhases::ones(2)).unwrap();
        assert_eq!(pred.g_hat.shape(), (2, 2));
        assert_eq!(pred.h_r_hat.shape(), (2, 2));
        assert_eq!(pred.h_hat.shape(), (2, 2));
        assert!(
            pred.h_hat
                .sub(&pred.h_r_hat.matmul(&pred.g_hat).unwrap())
                .unwrap()
                .frob_norm()
                < 1e-12
        );

        let theta = RisPhases::random(2, &mut RngStream::new(4));
        let pred = ien_predict(&model, &locs, &theta).unwrap();
        let want = pred
            .h_r_hat
            .matmul(&CMatrix::from_diag(&theta))
            .unwrap()
            .matmul(&pred.g_hat)
            .unwrap();
        assert!(pred.h_hat.sub(&want).unwrap().frob_norm() < 1e-12);
        assert!(ien_predict(&model, &locs, &RisPhases::ones(3)).is_err());
    }

    #[test]
    fn mse_cases() {
        let a = CMatrix::from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(
            ien_mse(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(),
            0.0
        );
        let mut b = a.clone();
        b[(0, 1)] += C64::new(2.0, 0.0);
        assert_eq!(
            ien_mse(&[b.clone()], std::slice::from_ref(&a)).unwrap(),
            4.0
        );
        assert_eq!(
            ien_mse(&[b, a.clone()], &[a.clone(), a.clone()]).unwrap(),
            2.0
        );
        assert!(ien_mse(std::slice::from_ref(&a), &[]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let model = tiny_model(5);
        let mut rng = RngStream::new(6);
        let sample = random_sample(&model, &mut rng);
        let (gb, gu) = ien_backward(&model, &sample).unwrap();
        let h = 1e-5;
        for (which, grads) in [(0, gb.flat()), (1, gu.flat())] {
            let base = if which == 0 {
                model.bs_ris_net.params_flat()
            } else {
                model.ris_ue_net.params_flat()
            };
            for i in 0..base.len() {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p[i] += delta;
                    let mut mm = model.clone();
                    if which == 0 {
                        mm.bs_ris_net.set_params_flat(&p).unwrap();
                    } else {
                        mm.ris_ue_net.set_params_flat(&p).unwrap();
                    }
                    mm.sample_loss(&sample).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let scale = fd.abs().max(grads[i].abs()).max(1e-3);
                assert!(
                    (fd - grads[i]).abs() / scale < 1e-5,
                    "net {which} param {i}: {} vs {fd}",
                    grads[i]
                );
            }
        }
    }

    #[test]
    fn perfect_prediction_gives_zero_gradient() {
        let model = tiny_model(7);
        let locs: DeviceLocations = (&geometry()).into();
        let theta = RisPhases::random(2, &mut RngStream::new(8));
        let pred = ien_predict(&model, &locs, &theta).unwrap();
        let sample = IenSample {
            loc_bs: locs.bs,
            loc_ris: locs.ris,
            loc_ue: locs.ue,
            theta,
            label: pred.h_hat,
        };
        let (gb, gu) = ien_backward(&model, &sample).unwrap();
        assert!(gb.flat().iter().all(|g| g.abs() < 1e-12));
        assert!(gu.flat().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn factor_gradients_scale_with_error() {
        let mut rng = RngStream::new(9);
        let mut rand =
            |r, c| CMatrix::from_fn(r, c, |_, _| C64::new(rng.gaussian(), rng.gaussian()));
        let h = rand(2, 3);
        let g = rand(3, 2);
        let y = rand(2, 2);
        let theta = RisPhases::from_angles(&[0.1, 1.2, -0.4]);
        let pred = h.mul_diag_right(&theta).unwrap().matmul(&g).unwrap();
        let e = pred.sub(&y).unwrap();
        let y2 = pred.sub(&e.scale(2.0)).unwrap();
        let (gh1, gg1, _) = composite_factor_grads(&h, &theta, &g, &y).unwrap();
        let (gh2, gg2, _) = composite_factor_grads(&h, &theta, &g, &y2).unwrap();
        assert!(gh2.sub(&gh1.scale(2.0)).unwrap().frob_norm() < 1e-12);
        assert!(gg2.sub(&gg1.scale(2.0)).unwrap().frob_norm() < 1e-12);
    }

    fn dataset_cfg(u: usize, f: usize) -> IenDatasetConfig {
        IenDatasetConfig {
            u_locations: u,
            f_thetas_per_location: f,
            label_noise_std: 0.0,
            rng_seed: 11,
        }
    }

    #[test]
    fn dataset_cardinality_labels_and_determinism() {
        let arrays = ArrayConfig::new(2, 2, 2, 2).unwrap();
        let scen = RngStream::new(12);
        let data = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(3, 4),
            &scen,
        )
        .unwrap();
        assert_eq!(data.len(), 12);
        for s in &data {
            let pair = synthesize_channels(
                &geometry().with_ue(s.loc_ue),
                &arrays,
                &pl(),
                &mut scen.clone(),
            )
            .unwrap();
            let want = composite_channel(&pair, &s.theta).unwrap();
            assert!(s.label.sub(&want).unwrap().frob_norm() <= 1e-15 * want.frob_norm());
        }
        let again = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(3, 4),
            &scen,
        )
        .unwrap();
        assert_eq!(data, again);
        assert!(generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(0, 4),
            &scen
        )
        .is_err());
    }

    #[test]
    fn label_noise_perturbs_labels() {
        let arrays = ArrayConfig::new(2, 2, 2, 2).unwrap();
        let scen = RngStream::new(12);
        let clean = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(2, 2),
            &scen,
        )
        .unwrap();
        let noisy_cfg = IenDatasetConfig {
            label_noise_std: 0.1,
            ..dataset_cfg(2, 2)
        };
        let noisy =
            generate_ien_dataset(&geometry(), &area(), &arrays, &pl(), &noisy_cfg, &scen).unwrap();
        for (a, b) in clean.iter().zip(&noisy) {
            let rel = a.label.sub(&b.label).unwrap().frob_norm() / a.label.frob_norm();
            assert!(rel > 0.0 && rel < 1.0);
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let model = tiny_model(13);
        let mut rng = RngStream::new(14);
        let data: Vec<IenSample> = (0..4).map(|_| random_sample(&model, &mut rng)).collect();
        let cfg = IenTrainConfig {
            epochs: 0,
            batch_size: 2,
            learning_rate: 1e-3,
            shuffle_seed: 1,
        };
        let (trained, trace) = train_ien(model.clone(), &data, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(trace.is_empty());
        assert!(train_ien(model, &[], &cfg).is_err());
    }

    #[test]
    fn overfits_a_single_sample() {
        let arrays = ArrayConfig::new(2, 2, 2, 2).unwrap();
        let scen = RngStream::new(15);
        let data = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(1, 1),
            &scen,
        )
        .unwrap();
        let norm = CoordNormalizer::for_scenario(&geometry(), &area());
        let model = IenModel::new(arrays, norm, label_rms(&data), &mut RngStream::new(16)).unwrap();
        let cfg = IenTrainConfig {
            epochs: 3000,
            batch_size: 1,
            learning_rate: 1e-2,
            shuffle_seed: 2,
        };
        let (trained, trace) = train_ien(model, &data, &cfg).unwrap();
        assert!(
            *trace.last().unwrap() < 1e-3,
            "final mse {}",
            trace.last().unwrap()
        );

        let cfg = crate::env::EnvConfig::from_dbm(20.0, -80.0).unwrap();
        let q = TransmitCovariance::isotropic(2, cfg.power_budget_p);
        let s = &data[0];
        let pred = ien_predicted_rate(
            &trained,
            &s.locations(),
            &s.theta,
            &q,
            cfg.noise_power_sigma2,
        )
        .unwrap();
        let truth = achievable_rate(&s.label, &q, cfg.noise_power_sigma2).unwrap();
        assert!(pred > 0.0);
        assert!(
            (pred - truth).abs() < 1e-2 * truth.max(1e-3),
            "{pred} vs {truth}"
        );
    }

    #[test]
    fn short_run_does_not_increase_mse() {
        let arrays = ArrayConfig::new(2, 2, 2, 2).unwrap();
        let scen = RngStream::new(17);
        let data = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(20, 4),
            &scen,
        )
        .unwrap();
        let norm = CoordNormalizer::for_scenario(&geometry(), &area());
        let model = IenModel::new(arrays, norm, label_rms(&data), &mut RngStream::new(18)).unwrap();
        let initial = dataset_mse(&model, &data).unwrap();
        let cfg = IenTrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            shuffle_seed: 3,
        };
        let (_, trace) = train_ien(model, &data, &cfg).unwrap();
        assert!(*trace.last().unwrap() <= initial);
    }

    #[test]
    fn oracle_matches_prediction() {
        let model = Arc::new(tiny_model(19));
        let locs: DeviceLocations = (&geometry()).into();
        let oracle = IenOracle::new(model.clone(), locs).unwrap();
        let theta = RisPhases::random(2, &mut RngStream::new(20));
        let direct = ien_predict(&model, &locs, &theta).unwrap().h_hat;
        assert!(
            oracle
                .composite(&theta)
                .unwrap()
                .sub(&direct)
                .unwrap()
                .frob_norm()
                < 1e-15
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = tiny_model(21);
        let text = model.to_checkpoint();
        let back = IenModel::from_checkpoint(&text).unwrap();
        assert_eq!(back, model);
        assert!(IenModel::from_checkpoint("ien 2\n").is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let arrays = ArrayConfig::new(2, 3, 2, 1).unwrap();
        let data = generate_ien_dataset(
            &geometry(),
            &area(),
            &arrays,
            &pl(),
            &dataset_cfg(2, 2),
            &RngStream::new(22),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(&buf[..], &arrays).unwrap();
        assert_eq!(back, data);
    }
}
