use rand_chacha::ChaCha8Rng;

use super::{eval_on_tensor, LinearLayer};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// Squeeze-excitation: rescales each channel by a gate computed from the
/// utterance-level channel means.
#[derive(Clone, Debug)]
pub struct SeBlock {
    /// `W1 [R, C]`, `b1 [R]`
    pub squeeze: LinearLayer,
    /// `W2 [C, R]`, `b2 [C]`
    pub excite: LinearLayer,
}

/// Explicit SE parameters for [`se_block`].
#[derive(Clone, Debug)]
pub struct SeParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl SeParams {
    /// All-zero parameters: every gate is `sigmoid(0) = 0.5`.
    pub fn zeros(channels: usize, bottleneck: usize) -> Self {
        Self {
            w1: Tensor::zeros(vec![bottleneck, channels]),
            b1: Tensor::zeros(vec![bottleneck]),
            w2: Tensor::zeros(vec![channels, bottleneck]),
            b2: Tensor::zeros(vec![channels]),
        }
    }
}

impl SeBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, bottleneck: usize) -> Self {
        Self {
            squeeze: LinearLayer::new(store, rng, &format!("{name}.squeeze"), channels, bottleneck, true),
            excite: LinearLayer::new(store, rng, &format!("{name}.excite"), bottleneck, channels, true),
        }
    }

    pub fn from_params(store: &mut ParamStore, name: &str, p: SeParams) -> Result<Self> {
        let (r, c) = match *p.w1.shape() {
            [r, c] => (r, c),
            _ => return Err(Error::shape("se_block", "W1 [R, C]", p.w1.shape())),
        };
        if p.b1.shape() != [r] || p.w2.shape() != [c, r] || p.b2.shape() != [c] {
            return Err(Error::shape("se_block", format!("b1 [{r}], W2 [{c}, {r}], b2 [{c}]"), p.w2.shape()));
        }
        Ok(Self {
            squeeze: LinearLayer::from_tensors(store, &format!("{name}.squeeze"), p.w1, Some(p.b1)),
            excite: LinearLayer::from_tensors(store, &format!("{name}.excite"), p.w2, Some(p.b2)),
        })
    }

    /// Channel gates `s = sigmoid(W2 relu(W1 z + b1) + b2)` with `z` the time mean, `[B, C]`.
    pub fn gates(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let z = s.graph.mean_time(h)?;
        let a = self.squeeze.forward(s, z)?;
        let a = s.graph.relu(a);
        let e = self.excite.forward(s, a)?;
        Ok(s.graph.sigmoid(e))
    }

    pub fn forward(&self, s: &mut Session<'_>, h: Var) -> Result<Var> {
        let gates = self.gates(s, h)?;
        s.graph.scale_channels(h, gates)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.squeeze.params(), self.excite.params()].concat()
    }
}

/// Applies a squeeze-excitation block to `h: [C, T]`.
pub fn se_block(h: &Tensor, p: &SeParams) -> Result<Tensor> {
    let mut store = ParamStore::new();
    let se = SeBlock::from_params(&mut store, "se", p.clone())?;
    eval_on_tensor(&store, Mode::Eval, h, |s, x| se.forward(s, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_halve_the_input() {
        let h = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let y = se_block(&h, &SeParams::zeros(2, 1)).unwrap();
        assert_eq!(y, h.scale(0.5));
    }

    #[test]
    fn squeeze_is_the_row_mean() {
        // With W1 = I, b1 = 0, the squeezed vector passes through relu unchanged.
        let h = Tensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let mut store = ParamStore::new();
        let se = SeBlock::from_params(&mut store, "se", SeParams::zeros(2, 2)).unwrap();
        let mut s = Session::new(&store, Mode::Eval, false);
        let x = s.graph.constant(h.reshape(vec![1, 2, 2]).unwrap());
        let z = s.graph.mean_time(x).unwrap();
        assert_eq!(s.graph.value(z).data(), &[2.0, 2.0]);
        let _ = se;
    }

    #[test]
    fn mismatched_parameter_shapes_are_rejected() {
        let mut p = SeParams::zeros(4, 2);
        p.w2 = Tensor::zeros(vec![3, 2]);
        let h = Tensor::zeros(vec![4, 3]);
        assert!(se_block(&h, &p).is_err());
    }
}
