//! Convolution layer records shared by the networks, with introspection.

use facedeblur_tensor::{Graph, Init, ParamId, ParamStore, Result, Scalar, Var};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Conv,
    Transposed,
}

/// One convolution: parameter handles plus the geometry needed to run and
/// describe it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvLayer {
    pub name: String,
    #[serde(skip)]
    pub weight: ParamId,
    #[serde(skip)]
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub kind: ConvKind,
}

impl ConvLayer {
    /// Registers `<name>.weight` and `<name>.bias` with uniform fan-in
    /// initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        kind: ConvKind,
    ) -> ConvLayer {
        let (shape, fan_in) = match kind {
            ConvKind::Conv => ([out_channels, in_channels, kernel, kernel], in_channels * kernel * kernel),
            // Each output of a stride-s transposed conv sees about k^2/s^2 taps per input channel.
            ConvKind::Transposed => {
                ([in_channels, out_channels, kernel, kernel], (in_channels * kernel * kernel / (stride * stride)).max(1))
            }
        };
        let weight = store.insert(format!("{name}.weight"), init.fan_in(&shape, fan_in));
        let bias = store.insert(format!("{name}.bias"), init.fan_in(&[out_channels], fan_in));
        ConvLayer { name: name.to_string(), weight, bias, in_channels, out_channels, kernel, stride, pad, kind }
    }

    /// Same-size convolution (odd kernel, stride 1).
    pub fn same<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(store, init, name, cin, cout, k, 1, k / 2, ConvKind::Conv)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, trainable: bool) -> Result<Var> {
        let w = g.param(store, self.weight, trainable);
        let b = g.param(store, self.bias, trainable);
        match self.kind {
            ConvKind::Conv => g.conv2d(x, w, Some(b), self.stride, self.pad),
            ConvKind::Transposed => g.conv_transpose2d(x, w, Some(b), self.stride, self.pad),
        }
    }

    /// Output side length for an input of side `n`.
    pub fn output_size(&self, n: usize) -> usize {
        match self.kind {
            ConvKind::Conv => (n + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1,
            ConvKind::Transposed => ((n - 1) * self.stride + self.kernel).saturating_sub(2 * self.pad),
        }
    }

    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).data_mut().iter_mut().for_each(|v| *v = T::zero());
        store.get_mut(self.bias).data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}
