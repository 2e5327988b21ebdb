//! Fixed feature extractor and per-layer correlation statistics.
//!
//! A [`FeatureNet`] is a stack of affine (flat mode) or 3×3 same-padded
//! convolution (spatial mode) layers with `tanh`, with weights drawn once
//! from a seeded Glorot-uniform distribution and never changed afterwards.
//!
//! Per layer, a feature map of shape `n × d × h × w` yields
//! * `Ψ = (1/nhw)(X̂ − X̄)ᵀ(X̂ − X̄)` where `X̂` is the `nhw × d` channel view, and
//! * `Φ = (1/n) X′ᵀ Y` where `X′` is the `n × d` spatial average.
//!
//! Synthetic statistics are accumulated over batches by [`EmuState`], a
//! running mean.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};
use crate::linalg::{Mat, Vector};
use crate::rng;
use crate::spectral::PsdMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NetMode {
    Flat,
    /// Square `side × side` feature maps; input columns are `channels · side²`.
    Spatial { side: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input width followed by one width per layer (channels in spatial mode).
    pub widths: Vec<usize>,
    pub mode: NetMode,
    pub seed: u64,
}

impl NetConfig {
    pub fn flat(widths: &[usize], seed: u64) -> Self {
        NetConfig {
            widths: widths.to_vec(),
            mode: NetMode::Flat,
            seed,
        }
    }

    pub fn spatial_hw(&self) -> usize {
        match self.mode {
            NetMode::Flat => 1,
            NetMode::Spatial { side } => side * side,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FixedLayer {
    /// `weight` is `d_in × d_out`.
    Dense { weight: Mat, bias: Vector },
    /// `kernel[o][i][ky][kx]` flattened row-major, shape `c_out × c_in × 3 × 3`.
    Conv {
        kernel: Vec<f64>,
        bias: Vector,
        c_in: usize,
        c_out: usize,
        side: usize,
    },
}

impl FixedLayer {
    fn out_channels(&self) -> usize {
        match self {
            FixedLayer::Dense { weight, .. } => weight.ncols(),
            FixedLayer::Conv { c_out, .. } => *c_out,
        }
    }

    fn forward(&self, input: &Mat) -> Mat {
        match self {
            FixedLayer::Dense { weight, bias } => {
                let mut z = input * weight;
                for mut row in z.row_iter_mut() {
                    row += bias.transpose();
                }
                z
            }
            FixedLayer::Conv {
                kernel,
                bias,
                c_in,
                c_out,
                side,
            } => conv3x3(input, kernel, bias, *c_in, *c_out, *side),
        }
    }

    /// Gradient with respect to the layer input given the gradient of the pre-activation.
    fn backward_input(&self, grad_pre: &Mat) -> Mat {
        match self {
            FixedLayer::Dense { weight, .. } => grad_pre * weight.transpose(),
            FixedLayer::Conv {
                kernel,
                c_in,
                c_out,
                side,
                ..
            } => conv3x3_transpose(grad_pre, kernel, *c_in, *c_out, *side),
        }
    }
}

fn kidx(o: usize, i: usize, ky: usize, kx: usize, c_in: usize) -> usize {
    ((o * c_in + i) * 3 + ky) * 3 + kx
}

fn conv3x3(input: &Mat, kernel: &[f64], bias: &Vector, c_in: usize, c_out: usize, side: usize) -> Mat {
    let hw = side * side;
    let n = input.nrows();
    let mut out = Mat::zeros(n, c_out * hw);
    for s in 0..n {
        for o in 0..c_out {
            for y in 0..side {
                for x in 0..side {
                    let mut acc = bias[o];
                    for i in 0..c_in {
                        for ky in 0..3 {
                            let yy = y as isize + ky as isize - 1;
                            if yy < 0 || yy >= side as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let xx = x as isize + kx as isize - 1;
                                if xx < 0 || xx >= side as isize {
                                    continue;
                                }
                                let col = i * hw + yy as usize * side + xx as usize;
                                acc += kernel[kidx(o, i, ky, kx, c_in)] * input[(s, col)];
                            }
                        }
                    }
                    out[(s, o * hw + y * side + x)] = acc;
                }
            }
        }
    }
    out
}

fn conv3x3_transpose(grad: &Mat, kernel: &[f64], c_in: usize, c_out: usize, side: usize) -> Mat {
    let hw = side * side;
    let n = grad.nrows();
    let mut out = Mat::zeros(n, c_in * hw);
    for s in 0..n {
        for o in 0..c_out {
            for y in 0..side {
                for x in 0..side {
                    let g = grad[(s, o * hw + y * side + x)];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..c_in {
                        for ky in 0..3 {
                            let yy = y as isize + ky as isize - 1;
                            if yy < 0 || yy >= side as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let xx = x as isize + kx as isize - 1;
                                if xx < 0 || xx >= side as isize {
                                    continue;
                                }
                                let col = i * hw + yy as usize * side + xx as usize;
                                out[(s, col)] += kernel[kidx(o, i, ky, kx, c_in)] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Immutable feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    config: NetConfig,
    layers: Vec<FixedLayer>,
}

/// Builds a net with seeded Glorot-uniform weights and biases.
pub fn build_net(config: &NetConfig) -> Result<FeatureNet> {
    if config.widths.len() < 2 {
        return Err(UniddError::InvalidConfig(
            "net needs an input width and at least one layer".into(),
        ));
    }
    if config.widths.iter().any(|&w| w == 0) {
        return Err(UniddError::InvalidConfig("layer widths must be positive".into()));
    }
    if let NetMode::Spatial { side } = config.mode {
        if side == 0 {
            return Err(UniddError::InvalidConfig("spatial side must be positive".into()));
        }
    }
    let mut rng = rng::stream(config.seed, "feature-net");
    let layers = config
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            match config.mode {
                NetMode::Flat => {
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let weight = Mat::from_fn(fan_in, fan_out, |_, _| rng.random_range(-s..s));
                    let bias = Vector::from_fn(fan_out, |_, _| rng.random_range(-s..s));
                    FixedLayer::Dense { weight, bias }
                }
                NetMode::Spatial { side } => {
                    let s = (6.0 / (9 * (fan_in + fan_out)) as f64).sqrt();
                    let kernel = (0..fan_out * fan_in * 9).map(|_| rng.random_range(-s..s)).collect();
                    let bias = Vector::from_fn(fan_out, |_, _| rng.random_range(-s..s));
                    FixedLayer::Conv {
                        kernel,
                        bias,
                        c_in: fan_in,
                        c_out: fan_out,
                        side,
                    }
                }
            }
        })
        .collect();
    Ok(FeatureNet {
        config: config.clone(),
        layers,
    })
}

/// Activations of one layer, stored `n × (d·h·w)` with channel-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Mat,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// 1-based layer index.
    pub layer: usize,
}

impl FeatureMap {
    pub fn new(data: Mat, channels: usize, height: usize, width: usize, layer: usize) -> Result<Self> {
        if data.ncols() != channels * height * width {
            return Err(UniddError::ShapeMismatch(format!(
                "feature map has {} columns, expected {}x{}x{}",
                data.ncols(),
                channels,
                height,
                width
            )));
        }
        Ok(FeatureMap {
            data,
            channels,
            height,
            width,
            layer,
        })
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn hw(&self) -> usize {
        self.height * self.width
    }

    /// `(n, d, h, w)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.samples(), self.channels, self.height, self.width)
    }
}

impl FeatureNet {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.config.widths[0] * self.config.spatial_hw()
    }

    /// Channel count of each layer's output.
    pub fn layer_channels(&self) -> Vec<usize> {
        self.layers.iter().map(FixedLayer::out_channels).collect()
    }

    /// Channel count of the final layer.
    pub fn feature_dim(&self) -> usize {
        *self.config.widths.last().expect("validated at build")
    }

    pub fn forward(&self, inputs: &Mat) -> Result<Vec<FeatureMap>> {
        if inputs.ncols() != self.input_width() {
            return Err(UniddError::ShapeMismatch(format!(
                "net expects {} input columns, got {}",
                self.input_width(),
                inputs.ncols()
            )));
        }
        let side = match self.config.mode {
            NetMode::Flat => 1,
            NetMode::Spatial { side } => side,
        };
        let mut maps = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&current);
            z.apply(|v| *v = v.tanh());
            if z.iter().any(|v| !v.is_finite()) {
                return Err(UniddError::NonFiniteActivation(l + 1));
            }
            maps.push(FeatureMap::new(z.clone(), layer.out_channels(), side, side, l + 1)?);
            current = z;
        }
        Ok(maps)
    }

    /// Reverse pass: given `∂L/∂A_l` for each layer output, returns `∂L/∂inputs`.
    ///
    /// `maps` must be the output of [`FeatureNet::forward`] on the same inputs.
    pub fn backward(&self, maps: &[FeatureMap], mut layer_grads: Vec<Mat>) -> Result<Mat> {
        if maps.len() != self.layers.len() || layer_grads.len() != self.layers.len() {
            return Err(UniddError::ShapeMismatch(format!(
                "backward needs {} layers, got {} maps and {} gradients",
                self.layers.len(),
                maps.len(),
                layer_grads.len()
            )));
        }
        let mut upstream = layer_grads.pop().expect("at least one layer");
        for l in (0..self.layers.len()).rev() {
            let act = &maps[l].data;
            check_same(act, &upstream)?;
            let grad_pre = upstream.zip_map(act, |g, a| g * (1.0 - a * a));
            let below = self.layers[l].backward_input(&grad_pre);
            upstream = match layer_grads.pop() {
                Some(extra) => below + extra,
                None => below,
            };
        }
        Ok(upstream)
    }
}

fn check_same(a: &Mat, b: &Mat) -> Result<()> {
    crate::linalg::check_same_shape(a, b, "layer gradient")
}

/// `nhw × d` channel view; row `i·hw + p` is sample `i` at spatial position `p`.
pub fn reshape_channels(f: &FeatureMap) -> Mat {
    let (n, d, _, _) = f.shape();
    let hw = f.hw();
    Mat::from_fn(n * hw, d, |r, ch| f.data[(r / hw, ch * hw + r % hw)])
}

/// Inverse of [`reshape_channels`].
pub fn unreshape_channels(x_hat: &Mat, height: usize, width: usize, layer: usize) -> Result<FeatureMap> {
    let hw = height * width;
    if hw == 0 || x_hat.nrows() % hw != 0 {
        return Err(UniddError::ShapeMismatch(format!(
            "{} rows is not a multiple of h*w = {hw}",
            x_hat.nrows()
        )));
    }
    let n = x_hat.nrows() / hw;
    let d = x_hat.ncols();
    let data = Mat::from_fn(n, d * hw, |i, col| x_hat[(i * hw + col % hw, col / hw)]);
    FeatureMap::new(data, d, height, width, layer)
}

/// `n × d` mean over spatial positions.
pub fn spatial_average(f: &FeatureMap) -> Mat {
    let (n, d, _, _) = f.shape();
    let hw = f.hw();
    if hw == 1 {
        return f.data.clone();
    }
    Mat::from_fn(n, d, |i, ch| {
        (0..hw).map(|p| f.data[(i, ch * hw + p)]).sum::<f64>() / hw as f64
    })
}

/// Normalized feature-feature (`psi`) and feature-label (`phi`) correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrStats {
    pub psi: PsdMatrix,
    pub phi: Mat,
}

impl CorrStats {
    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn classes(&self) -> usize {
        self.phi.ncols()
    }

    const MAGIC: &'static [u8; 4] = b"UDD1";

    /// Little-endian: magic, u32 d, u32 c, then Ψ and Φ as row-major f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let (d, c) = (self.dim(), self.classes());
        w.write_all(Self::MAGIC)?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&(c as u32).to_le_bytes())?;
        write_row_major(w, self.psi.as_mat())?;
        write_row_major(w, &self.phi)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != Self::MAGIC {
            return Err(UniddError::Format("bad correlation-stats magic".into()));
        }
        let d = read_u32(r)? as usize;
        let c = read_u32(r)? as usize;
        let psi = read_row_major(r, d, d)?;
        let phi = read_row_major(r, d, c)?;
        let psi = PsdMatrix::new(psi).map_err(|e| UniddError::Format(format!("stored psi: {e}")))?;
        Ok(CorrStats { psi, phi })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

pub(crate) fn write_row_major<W: Write>(w: &mut W, m: &Mat) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_row_major<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Mat> {
    let mut m = Mat::zeros(rows, cols);
    let mut buf = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            read_exact(r, &mut buf)?;
            m[(i, j)] = f64::from_le_bytes(buf);
        }
    }
    Ok(m)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => UniddError::Format("unexpected end of file".into()),
        _ => UniddError::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Checks that every row of `y` is one-hot and returns the class indices.
pub fn label_indices(y: &Mat) -> Result<Vec<usize>> {
    y.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut hot = None;
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 && hot.is_none() {
                    hot = Some(j);
                } else if v != 0.0 {
                    hot = None;
                    break;
                }
            }
            hot.ok_or_else(|| UniddError::InvalidConfig(format!("label row {i} is not one-hot")))
        })
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Mat {
    let mut y = Mat::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = 1.0;
    }
    y
}

/// Centered covariance of the channel view (divisor `nhw`) and the scaled
/// class sums of spatially averaged features (divisor `n`).
pub fn corr_stats(f: &FeatureMap, y: &Mat) -> Result<CorrStats> {
    let n = f.samples();
    if n < 2 {
        return Err(UniddError::DegenerateBatch(n));
    }
    if y.nrows() != n {
        return Err(UniddError::ShapeMismatch(format!(
            "{} label rows for {n} samples",
            y.nrows()
        )));
    }
    label_indices(y)?;
    let x_hat = reshape_channels(f);
    let centered = center_columns(&x_hat);
    let rows = x_hat.nrows() as f64;
    let psi = crate::linalg::gram(&centered) / rows;
    let phi = spatial_average(f).transpose() * y / n as f64;
    Ok(CorrStats {
        psi: PsdMatrix::new(psi)?,
        phi,
    })
}

pub(crate) fn center_columns(x: &Mat) -> Mat {
    let mut out = x.clone();
    let rows = x.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Running mean of per-batch synthetic statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmuState {
    pub psi_s: Mat,
    pub phi_s: Mat,
    pub count: usize,
}

impl EmuState {
    pub fn new(d: usize, c: usize) -> Self {
        EmuState {
            psi_s: Mat::zeros(d, d),
            phi_s: Mat::zeros(d, c),
            count: 0,
        }
    }

    /// `S ← (1/b)·batch + (1 − 1/b)·S` with `b` the new count.
    pub fn observe(&mut self, batch: &CorrStats) -> Result<()> {
        if batch.psi.as_mat().shape() != self.psi_s.shape() || batch.phi.shape() != self.phi_s.shape() {
            return Err(UniddError::ShapeMismatch(format!(
                "batch stats {}x{} do not match state {}x{}",
                batch.dim(),
                batch.classes(),
                self.psi_s.nrows(),
                self.phi_s.ncols()
            )));
        }
        self.count += 1;
        let w = 1.0 / self.count as f64;
        self.psi_s = batch.psi.as_mat() * w + &self.psi_s * (1.0 - w);
        self.phi_s = &batch.phi * w + &self.phi_s * (1.0 - w);
        Ok(())
    }

    /// Weight of the most recent batch in the current state.
    pub fn current_weight(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            1.0 / self.count as f64
        }
    }
}

pub fn emu_update(state: &EmuState, batch: &CorrStats) -> Result<EmuState> {
    let mut next = state.clone();
    next.observe(batch)?;
    Ok(next)
}
