//! Layers and the two attention blocks, recorded onto a [`Graph`].

use fpnr_tensor::{
    he_normal, Activation, ConvSpec, Graph, ParamId, ParamStore, Scalar, Tensor, Var,
};
use rand::Rng;

use super::arch::{Widths, SHUFFLE_FACTOR};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub activation: Activation,
}

impl ConvLayer {
    /// He-normal weights, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&spec.weight_shape(), spec.fan_in(), rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]));
        Self {
            weight,
            bias,
            spec,
            activation,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.conv2d(x, w, b, self.spec)?;
        Ok(g.activate(y, self.activation))
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[inputs, outputs], inputs, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.dense(x, w, b)?;
        Ok(g.activate(y, self.activation))
    }
}

/// Coarse-fine convolution: dilated, standard and sub-pixel branches in
/// parallel, concatenated and fused back to the trunk width.
#[derive(Clone, Debug)]
pub struct CfConvUnit {
    pub dilated: ConvLayer,
    pub standard: ConvLayer,
    /// Runs on the 2x max-pooled input; its output is pixel-shuffled back.
    pub subpixel: ConvLayer,
    pub fuse: ConvLayer,
}

/// Intermediate values of one coarse-fine forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CfConvVars {
    pub concat: Var,
    pub output: Var,
}

impl CfConvUnit {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        w: &Widths,
        rng: &mut impl Rng,
    ) -> Self {
        let relu = Activation::Relu;
        Self {
            dilated: ConvLayer::new(
                store,
                &format!("{name}.dilated"),
                ConvSpec::same(w.trunk, w.dilated, 3, 2),
                relu,
                rng,
            ),
            standard: ConvLayer::new(
                store,
                &format!("{name}.standard"),
                ConvSpec::same(w.trunk, w.trunk, 3, 1),
                relu,
                rng,
            ),
            subpixel: ConvLayer::new(
                store,
                &format!("{name}.subpixel"),
                ConvSpec::same(w.trunk, w.subpixel, 3, 1),
                relu,
                rng,
            ),
            fuse: ConvLayer::new(
                store,
                &format!("{name}.fuse"),
                ConvSpec::same(w.concat(), w.trunk, 3, 1),
                relu,
                rng,
            ),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<CfConvVars> {
        let dil = self.dilated.forward(g, store, x)?;
        let std = self.standard.forward(g, store, x)?;
        let pooled = g.max_pool2(x)?;
        let sp = self.subpixel.forward(g, store, pooled)?;
        let sp = g.pixel_shuffle(sp, SHUFFLE_FACTOR)?;
        let concat = g.concat_channels(&[dil, std, sp])?;
        let output = self.fuse.forward(g, store, concat)?;
        Ok(CfConvVars { concat, output })
    }
}

/// Spatial-channel attention: `x * spatial(x) * channel(x)` with the channel
/// mask broadcast over the raster.
#[derive(Clone, Debug)]
pub struct ScnauUnit {
    pub spatial: [ConvLayer; 3],
    pub channel: [DenseLayer; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct ScnauVars {
    pub spatial_mask: Var,
    pub channel_mask: Var,
    pub output: Var,
}

impl ScnauUnit {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        w: &Widths,
        rng: &mut impl Rng,
    ) -> Self {
        let (relu, sig) = (Activation::Relu, Activation::Sigmoid);
        let c = w.trunk;
        let spatial = [
            ConvLayer::new(
                store,
                &format!("{name}.spatial1"),
                ConvSpec::same(c, c, 3, 1),
                relu,
                rng,
            ),
            ConvLayer::new(
                store,
                &format!("{name}.spatial2"),
                ConvSpec::same(c, w.attention_mid, 3, 1),
                relu,
                rng,
            ),
            ConvLayer::new(
                store,
                &format!("{name}.spatial3"),
                ConvSpec::same(w.attention_mid, c, 1, 1),
                sig,
                rng,
            ),
        ];
        let channel = [
            DenseLayer::new(store, &format!("{name}.channel1"), c, w.dense1, relu, rng),
            DenseLayer::new(
                store,
                &format!("{name}.channel2"),
                w.dense1,
                w.dense2,
                relu,
                rng,
            ),
            DenseLayer::new(store, &format!("{name}.channel3"), w.dense2, c, sig, rng),
        ];
        Self { spatial, channel }
    }

    /// With `force_unit_masks` both masks are replaced by ones.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        force_unit_masks: bool,
    ) -> Result<ScnauVars> {
        let (spatial_mask, channel_mask) = if force_unit_masks {
            let shape = g.value(x).shape().to_vec();
            let s = g.constant(Tensor::full(&shape, T::one()));
            let c = g.constant(Tensor::full(&shape[..2], T::one()));
            (s, c)
        } else {
            let mut s = x;
            for layer in &self.spatial {
                s = layer.forward(g, store, s)?;
            }
            let mut c = g.global_avg_pool(x)?;
            for layer in &self.channel {
                c = layer.forward(g, store, c)?;
            }
            (s, c)
        };
        let gated = g.mul_channels(x, channel_mask)?;
        let output = g.mul(spatial_mask, gated)?;
        Ok(ScnauVars {
            spatial_mask,
            channel_mask,
            output,
        })
    }
}
