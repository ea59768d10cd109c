use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::ops::{
    dense_backward, dense_forward, layernorm_backward, layernorm_forward, mish_backward,
    mish_forward, simplicial_backward, simplicial_forward, LayerNormCache,
};
use crate::nn::store::ParamStore;
use crate::nn::LAYERNORM_EPS;
use crate::rng::Rng;
use crate::scalar::{c, Scalar};

/// How the last layer of an MLP is shaped.
///
/// `Simplicial(v)` keeps the final NormedLinear block and normalizes its
/// output into width-`v` simplices (encoder, dynamics). `Linear` and
/// `GaussianHead` are a plain dense layer; the Gaussian head's output is
/// split into mean/log-std by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalActivation {
    Simplicial(usize),
    Linear,
    GaussianHead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Act {
    Mish,
    Simplicial(usize),
    None,
}

#[derive(Clone, Debug)]
struct Layer {
    input: usize,
    output: usize,
    normed: bool,
    act: Act,
}

/// A stack of NormedLinear blocks (linear -> LayerNorm -> activation)
/// with parameters held externally in a `ParamStore` under this MLP's
/// name prefix.
#[derive(Clone, Debug)]
pub struct Mlp {
    name: String,
    layers: Vec<Layer>,
}

struct LayerTape<S> {
    x: Matrix<S>,
    ln: Option<LayerNormCache<S>>,
    act_in: Option<Matrix<S>>,
    act_out: Option<Matrix<S>>,
}

/// Activations recorded by `forward_tape`, replayed in reverse by the
/// backward passes.
pub struct MlpTape<S> {
    layers: Vec<LayerTape<S>>,
}

impl Mlp {
    /// `widths` runs [input, hidden..., output]; needs at least one layer.
    pub fn new(name: impl Into<String>, widths: &[usize], final_act: FinalActivation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NewtError::invalid("mlp needs >= 1 layer".to_string()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NewtError::invalid("mlp widths must be >= 1".to_string()));
        }
        if let FinalActivation::Simplicial(v) = final_act {
            if v == 0 || widths[widths.len() - 1] % v != 0 {
                return Err(NewtError::dim(format!(
                    "output width {} not divisible by simplex dim {v}",
                    widths[widths.len() - 1]
                )));
            }
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let last = i == n - 1;
            let (normed, act) = if last {
                match final_act {
                    FinalActivation::Simplicial(v) => (true, Act::Simplicial(v)),
                    FinalActivation::Linear | FinalActivation::GaussianHead => (false, Act::None),
                }
            } else {
                (true, Act::Mish)
            };
            layers.push(Layer {
                input: widths[i],
                output: widths[i + 1],
                normed,
                act,
            });
        }
        Ok(Mlp {
            name: name.into(),
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    fn w_name(&self, i: usize) -> String {
        format!("{}.l{i}.w", self.name)
    }
    fn b_name(&self, i: usize) -> String {
        format!("{}.l{i}.b", self.name)
    }
    fn g_name(&self, i: usize) -> String {
        format!("{}.l{i}.ln_g", self.name)
    }
    fn beta_name(&self, i: usize) -> String {
        format!("{}.l{i}.ln_b", self.name)
    }

    /// All parameter names owned by this MLP, in deterministic order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(self.w_name(i));
            out.push(self.b_name(i));
            if layer.normed {
                out.push(self.g_name(i));
                out.push(self.beta_name(i));
            }
        }
        out
    }

    /// Inserts freshly initialized parameters: weights uniform in
    /// +-sqrt(1/fan_in), biases zero, LayerNorm gain 1 / bias 0.
    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut Rng) {
        for (i, layer) in self.layers.iter().enumerate() {
            let bound = (1.0 / layer.input as f64).sqrt();
            let data: Vec<S> = (0..layer.input * layer.output)
                .map(|_| c(rng.range(-bound, bound)))
                .collect();
            store.insert(
                self.w_name(i),
                Matrix::from_vec(layer.input, layer.output, data).expect("init shape"),
            );
            store.insert(self.b_name(i), Matrix::zeros(1, layer.output));
            if layer.normed {
                let mut gain = Matrix::zeros(1, layer.output);
                gain.fill(S::ONE);
                store.insert(self.g_name(i), gain);
                store.insert(self.beta_name(i), Matrix::zeros(1, layer.output));
            }
        }
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = store.values(&self.w_name(i))?;
            let b = store.values(&self.b_name(i))?;
            h = dense_forward(&h, w, b)?;
            if layer.normed {
                let g = store.values(&self.g_name(i))?;
                let beta = store.values(&self.beta_name(i))?;
                let (y, _) = layernorm_forward(&h, g, beta, c(LAYERNORM_EPS))?;
                h = y;
            }
            h = match layer.act {
                Act::Mish => mish_forward(&h),
                Act::Simplicial(v) => simplicial_forward(&h, v)?,
                Act::None => h,
            };
        }
        Ok(h)
    }

    pub fn forward_tape<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: &Matrix<S>,
    ) -> Result<(Matrix<S>, MlpTape<S>)> {
        let mut h = x.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let w = store.values(&self.w_name(i))?;
            let b = store.values(&self.b_name(i))?;
            let input = h;
            h = dense_forward(&input, w, b)?;
            let mut ln = None;
            if layer.normed {
                let g = store.values(&self.g_name(i))?;
                let beta = store.values(&self.beta_name(i))?;
                let (y, cache) = layernorm_forward(&h, g, beta, c(LAYERNORM_EPS))?;
                ln = Some(cache);
                h = y;
            }
            let (act_in, act_out) = match layer.act {
                Act::Mish => {
                    let pre = h.clone();
                    h = mish_forward(&h);
                    (Some(pre), None)
                }
                Act::Simplicial(v) => {
                    h = simplicial_forward(&h, v)?;
                    (None, Some(h.clone()))
                }
                Act::None => (None, None),
            };
            tapes.push(LayerTape {
                x: input,
                ln,
                act_in,
                act_out,
            });
        }
        Ok((h, MlpTape { layers: tapes }))
    }

    /// Backpropagates `dy` through the recorded tape, accumulating
    /// parameter gradients in the store; returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        tape: &MlpTape<S>,
        dy: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        self.backward_impl(store, tape, dy, true)
    }

    /// Same as `backward` but leaves parameter gradients untouched; used
    /// where a module is treated as a constant function of its input
    /// (e.g. differentiating Q(z, a) with respect to `a` only).
    pub fn backward_input_only<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        tape: &MlpTape<S>,
        dy: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        self.backward_impl(store, tape, dy, false)
    }

    fn backward_impl<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        tape: &MlpTape<S>,
        dy: &Matrix<S>,
        accumulate: bool,
    ) -> Result<Matrix<S>> {
        if tape.layers.len() != self.layers.len() {
            return Err(NewtError::State(
                "backward called with mismatched tape".to_string(),
            ));
        }
        let mut grad = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let t = &tape.layers[i];
            grad = match layer.act {
                Act::Mish => {
                    let pre = t.act_in.as_ref().ok_or_else(|| {
                        NewtError::State("tape missing mish input".to_string())
                    })?;
                    mish_backward(pre, &grad)?
                }
                Act::Simplicial(v) => {
                    let out = t.act_out.as_ref().ok_or_else(|| {
                        NewtError::State("tape missing simplicial output".to_string())
                    })?;
                    simplicial_backward(out, v, &grad)?
                }
                Act::None => grad,
            };
            if layer.normed {
                let cache = t
                    .ln
                    .as_ref()
                    .ok_or_else(|| NewtError::State("tape missing layernorm".to_string()))?;
                let gain = store.values(&self.g_name(i))?.clone();
                let mut dgain = Matrix::zeros(1, layer.output);
                let mut dbias = Matrix::zeros(1, layer.output);
                grad = layernorm_backward(cache, &gain, &grad, &mut dgain, &mut dbias)?;
                if accumulate {
                    store.add_grad(&self.g_name(i), &dgain)?;
                    store.add_grad(&self.beta_name(i), &dbias)?;
                }
            }
            let w = store.values(&self.w_name(i))?.clone();
            if accumulate {
                let mut dw = Matrix::zeros(layer.input, layer.output);
                let mut db = Matrix::zeros(1, layer.output);
                grad = dense_backward(&t.x, &w, &grad, &mut dw, &mut db)?;
                store.add_grad(&self.w_name(i), &dw)?;
                store.add_grad(&self.b_name(i), &db)?;
            } else {
                // input-only: the weight/bias gradients are not needed
                grad = grad.matmul_transpose_rhs(&w)?;
            }
        }
        Ok(grad)
    }
}
