//! The two-stage cascade: a gain subnetwork whose output multiplies the
//! input, then an offset subnetwork whose output is added.

use fpnr_tensor::ops::elementwise;
use fpnr_tensor::{
    Activation, BinaryOp, Broadcast, ConvSpec, Graph, ParamStore, Scalar, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{WidthScale, Widths, NUM_BLOCKS};
use super::units::{CfConvUnit, ConvLayer, ScnauUnit};
use crate::error::{config_err, Result};
use crate::image::Image;

/// Inputs are divided by this before entering a subnetwork and the offset
/// subnetwork's output is multiplied by it, so the convolutions see values of
/// order one while images stay in display units.
pub const DISPLAY_RANGE: f64 = 255.0;

#[derive(Clone, Debug)]
pub struct Subnet {
    pub head: ConvLayer,
    pub blocks: Vec<(CfConvUnit, ScnauUnit)>,
    pub output: ConvLayer,
}

impl Subnet {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        w: &Widths,
        output_bias: T,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let head = ConvLayer::new(
            store,
            &format!("{name}.head"),
            ConvSpec::same(1, w.trunk, 3, 1),
            Activation::Relu,
            rng,
        );
        let blocks = (0..NUM_BLOCKS)
            .map(|i| {
                let cf = CfConvUnit::new(store, &format!("{name}.block{i}.cfconv"), w, rng);
                let sc = ScnauUnit::new(store, &format!("{name}.block{i}.scnau"), w, rng);
                (cf, sc)
            })
            .collect();
        let output = ConvLayer::new(
            store,
            &format!("{name}.output"),
            ConvSpec::same(w.trunk, 1, 1, 1),
            Activation::Linear,
            rng,
        );
        // zero weights and a constant bias make the subnet output that constant
        store
            .get_mut(output.weight)
            .value
            .data_mut()
            .fill(T::zero());
        store
            .get_mut(output.bias)
            .value
            .data_mut()
            .fill(output_bias);
        Self {
            head,
            blocks,
            output,
        }
    }

    fn block_forward<T: Scalar>(
        &self,
        i: usize,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        opts: ForwardOptions,
        prefix: &str,
        trace: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let (cf, sc) = &self.blocks[i];
        let c = cf.forward(g, store, x)?;
        let s = sc.forward(g, store, c.output, opts.force_unit_masks)?;
        if opts.trace {
            trace.push((format!("{prefix}.block{i}.spatial_mask"), s.spatial_mask));
            trace.push((format!("{prefix}.block{i}.channel_mask"), s.channel_mask));
        }
        Ok(s.output)
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        opts: ForwardOptions,
        prefix: &str,
        trace: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let mut h = self.head.forward(g, store, x)?;
        for i in 0..self.blocks.len() {
            h = self.block_forward(i, g, store, h, opts, prefix, trace)?;
        }
        self.output.forward(g, store, h)
    }

    /// Same values as [`Subnet::forward`], one fresh tape per block so only a
    /// block's intermediates are alive at a time.
    fn forward_staged<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: Tensor<T>,
        opts: ForwardOptions,
        prefix: &str,
        features: &mut Vec<(String, Tensor<T>)>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.constant(x);
        let v = self.head.forward(&mut g, store, v)?;
        let mut h = g.value(v).clone();
        for i in 0..self.blocks.len() {
            let mut g = Graph::new();
            let v = g.constant(h);
            let mut trace = Vec::new();
            let v = self.block_forward(i, &mut g, store, v, opts, prefix, &mut trace)?;
            features.extend(trace.into_iter().map(|(n, t)| (n, g.value(t).clone())));
            h = g.value(v).clone();
        }
        let mut g = Graph::new();
        let v = g.constant(h);
        let v = self.output.forward(&mut g, store, v)?;
        Ok(g.value(v).clone())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every attention mask by ones (test hook).
    pub force_unit_masks: bool,
    /// Record attention masks.
    pub trace: bool,
}

/// Handles to the outputs of [`CascadeModel::forward_graph`].
#[derive(Clone, Debug)]
pub struct CascadeVars {
    pub x_hat: Var,
    pub gain: Var,
    pub offset: Var,
    /// `gain * y`, the input of the offset stage.
    pub gain_corrected: Var,
    pub trace: Vec<(String, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput<T> {
    pub x_hat: Tensor<T>,
    pub gain: Tensor<T>,
    pub offset: Tensor<T>,
    pub gain_corrected: Tensor<T>,
    pub features: Vec<(String, Tensor<T>)>,
}

#[derive(Clone, Debug)]
pub struct CascadeModel<T> {
    width_scale: WidthScale,
    widths: Widths,
    params: ParamStore<T>,
    gain_net: Subnet,
    offset_net: Subnet,
}

pub(crate) fn check_extent(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 || shape[1] != 1 {
        return config_err(format!("cascade input must be [B, 1, H, W], got {shape:?}"));
    }
    let (h, w) = (shape[2], shape[3]);
    if h < 2 || w < 2 {
        return config_err(format!(
            "input extent {h}x{w} is too small for the pooling path (need at least 2x2)"
        ));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return config_err(format!("input extent {h}x{w} must be even on both axes"));
    }
    Ok(())
}

impl<T: Scalar> CascadeModel<T> {
    /// Seeded initialization; the result is the identity map.
    pub fn new(width_scale: WidthScale, seed: u64) -> Self {
        let widths = Widths::for_scale(width_scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let gain_net = Subnet::new(&mut params, "gain", &widths, T::one(), &mut rng);
        let offset_net = Subnet::new(&mut params, "offset", &widths, T::zero(), &mut rng);
        Self {
            width_scale,
            widths,
            params,
            gain_net,
            offset_net,
        }
    }

    pub fn width_scale(&self) -> WidthScale {
        self.width_scale
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    pub fn gain_net(&self) -> &Subnet {
        &self.gain_net
    }

    pub fn offset_net(&self) -> &Subnet {
        &self.offset_net
    }

    /// Records the full forward pass of `y` (shape `[B, 1, H, W]`, display units).
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        y: Var,
        opts: ForwardOptions,
    ) -> Result<CascadeVars> {
        check_extent(g.value(y).shape())?;
        let inv = T::from_f64_lossy(1.0 / DISPLAY_RANGE);
        let mut trace = Vec::new();
        let gin = g.scale(y, inv);
        let gain = self
            .gain_net
            .forward(g, &self.params, gin, opts, "gain", &mut trace)?;
        let gain_corrected = g.mul(gain, y)?;
        let oin = g.scale(gain_corrected, inv);
        let o = self
            .offset_net
            .forward(g, &self.params, oin, opts, "offset", &mut trace)?;
        let offset = g.scale(o, T::from_f64_lossy(DISPLAY_RANGE));
        let x_hat = g.add(gain_corrected, offset)?;
        Ok(CascadeVars {
            x_hat,
            gain,
            offset,
            gain_corrected,
            trace,
        })
    }

    /// Inference on a `[B, 1, H, W]` batch, without keeping the whole tape.
    pub fn forward(&self, y: &Tensor<T>, opts: ForwardOptions) -> Result<CascadeOutput<T>> {
        check_extent(y.shape())?;
        let inv = T::from_f64_lossy(1.0 / DISPLAY_RANGE);
        let mut features = Vec::new();
        let gain = self.gain_net.forward_staged(
            &self.params,
            y.map(|v| v * inv),
            opts,
            "gain",
            &mut features,
        )?;
        let gain_corrected = elementwise(&gain, y, BinaryOp::Mul, Broadcast::None)?;
        let o = self.offset_net.forward_staged(
            &self.params,
            gain_corrected.map(|v| v * inv),
            opts,
            "offset",
            &mut features,
        )?;
        let range = T::from_f64_lossy(DISPLAY_RANGE);
        let offset = o.map(|v| v * range);
        let x_hat = elementwise(&gain_corrected, &offset, BinaryOp::Add, Broadcast::None)?;
        Ok(CascadeOutput {
            x_hat,
            gain,
            offset,
            gain_corrected,
            features,
        })
    }

    pub fn correct_image(&self, frame: &Image<T>) -> Result<Image<T>> {
        let out = self.forward(&frame.to_tensor(), ForwardOptions::default())?;
        Image::from_tensor(&out.x_hat)
    }

    /// Same architecture and values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> CascadeModel<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast());
        }
        CascadeModel {
            width_scale: self.width_scale,
            widths: self.widths,
            params,
            gain_net: self.gain_net.clone(),
            offset_net: self.offset_net.clone(),
        }
    }
}
