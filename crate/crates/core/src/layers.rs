//! Trainable layers. Each layer registers its tensors in a [`ParamStore`]
//! at construction and only keeps [`ParamId`]s, so the same layer value can
//! be run against any graph that borrows that store.
//!
//! Layout conventions: sequences are `features × time`; sdC output is
//! `rows × kernels × time`; baseline mesh frames are `time × channels × h × w`.

use rand::Rng;

use crate::autodiff::{Activation, Graph, ParamId, PoolKind, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamStore};
use crate::rng::RunRng;
use crate::tensor::{shape_string, Tensor};

/// Whether a forward pass is training (dropout active) or evaluating.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut RunRng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: in training each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`. Identity otherwise.
pub fn dropout_apply(g: &mut Graph, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let n = g.value(x).numel();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.mul_const(x, mask)
}

pub fn global_average_pool(g: &mut Graph, x: Var) -> Result<Var> {
    match g.shape(x) {
        [_, _] => g.mean_last(x),
        s => Err(Error::shape("global_average_pool", format!("expected F×T, got {}", shape_string(s)))),
    }
}

/// Dense map applied identically at every time step of an `S×T` input.
#[derive(Clone, Debug)]
pub struct TdFcLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_features: usize,
    pub out_features: usize,
}

impl TdFcLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = glorot_uniform(&[out_features, in_features], in_features, out_features, rng);
        Ok(TdFcLayer {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]))?,
            activation,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [s, _] if s == self.in_features => {}
            _ => {
                return Err(Error::shape(
                    "tdfc",
                    format!("expected {}×T input, got {}", self.in_features, shape_string(g.shape(x))),
                ))
            }
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(w, x)?;
        let z = g.add_bias(z, b, 0)?;
        g.activation(z, self.activation, 0)
    }
}

/// Temporal convolution sharing its kernels across every space row.
#[derive(Clone, Debug)]
pub struct SdConvLayer {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub num_kernels: usize,
    pub kernel_size: usize,
}

impl SdConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        num_kernels: usize,
        kernel_size: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = glorot_uniform(&[num_kernels, kernel_size], kernel_size, num_kernels * kernel_size, rng);
        Ok(SdConvLayer {
            kernels: store.add(format!("{name}.kernels"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[num_kernels]))?,
            activation,
            num_kernels,
            kernel_size,
        })
    }

    /// `S×T → S×C×(T−k+1)`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.kernels);
        let b = g.param(self.bias);
        let y = g.space_conv(x, w, b)?;
        g.activation(y, self.activation, 1)
    }
}

/// tdFC → sdC → time pooling → flatten of the first two axes.
#[derive(Clone, Debug)]
pub struct IntertwinedModule {
    pub tdfc: TdFcLayer,
    pub sdc: SdConvLayer,
    pub pool_size: usize,
    pub pool_kind: PoolKind,
}

impl IntertwinedModule {
    /// Output shape for an `s_in × t_in` input, or `None` if time collapses.
    pub fn output_shape(&self, t_in: usize) -> Option<[usize; 2]> {
        let conv_t = t_in.checked_sub(self.sdc.kernel_size)? + 1;
        let pooled = conv_t / self.pool_size;
        (pooled > 0).then_some([self.tdfc.out_features * self.sdc.num_kernels, pooled])
    }

    pub fn forward(&self, g: &mut Graph, x: Var, index: usize, trace: &mut Option<&mut Vec<TraceEntry>>) -> Result<Var> {
        let wrap = |e: Error| Error::Module {
            module: index,
            source: Box::new(e),
        };
        let a = self.tdfc.forward(g, x).map_err(wrap)?;
        record(g, trace, format!("module{index}.tdfc"), x, a);
        let c = self.sdc.forward(g, a).map_err(wrap)?;
        record(g, trace, format!("module{index}.sdc"), a, c);
        let p = g.pool(c, self.pool_size, self.pool_kind).map_err(wrap)?;
        record(g, trace, format!("module{index}.pool"), c, p);
        let f = g.flatten_space(p).map_err(wrap)?;
        record(g, trace, format!("module{index}.flatten"), p, f);
        Ok(f)
    }
}

/// Observed `(stage, input shape, output shape)` during a forward pass.
pub type TraceEntry = (String, Vec<usize>, Vec<usize>);

pub(crate) fn record(g: &Graph, trace: &mut Option<&mut Vec<TraceEntry>>, name: String, input: Var, output: Var) {
    if let Some(t) = trace {
        t.push((name, g.shape(input).to_vec(), g.shape(output).to_vec()));
    }
}

/// Gate activations of one LSTM step.
#[derive(Clone, Copy, Debug)]
pub struct LstmGates {
    pub input: Var,
    pub forget: Var,
    pub candidate: Var,
    pub output: Var,
}

/// Gate order in the stacked weights is input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let h4 = 4 * hidden_size;
        let wx = glorot_uniform(&[h4, input_size], input_size, h4, rng);
        let wh = glorot_uniform(&[h4, hidden_size], hidden_size, h4, rng);
        let mut b = vec![0.0; h4];
        b[hidden_size..2 * hidden_size].fill(1.0);
        Ok(LstmLayer {
            w_input: store.add(format!("{name}.w_input"), wx)?,
            w_hidden: store.add(format!("{name}.w_hidden"), wh)?,
            bias: store.add(format!("{name}.bias"), Tensor::vector(b))?,
            input_size,
            hidden_size,
        })
    }

    /// Runs the recurrence over an `F×T` sequence from zero state and
    /// returns the hidden state at every step.
    pub fn forward_sequence(&self, g: &mut Graph, x: Var, mut gates: Option<&mut Vec<LstmGates>>) -> Result<Vec<Var>> {
        let steps = match *g.shape(x) {
            [f, t] if f == self.input_size => t,
            _ => {
                return Err(Error::shape(
                    "lstm",
                    format!("expected {}×T input, got {}", self.input_size, shape_string(g.shape(x))),
                ))
            }
        };
        let h = self.hidden_size;
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let proj = g.matmul(wx, x)?;
        let proj = g.add_bias(proj, b, 0)?;
        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut z = g.column(proj, t)?;
            if let Some(hp) = hidden {
                let rec = g.matmul(wh, hp)?;
                z = g.add(z, rec)?;
            }
            let i = g.slice_rows(z, 0, h)?;
            let i = g.sigmoid(i);
            let f = g.slice_rows(z, h, h)?;
            let f = g.sigmoid(f);
            let c_hat = g.slice_rows(z, 2 * h, h)?;
            let c_hat = g.tanh(c_hat);
            let o = g.slice_rows(z, 3 * h, h)?;
            let o = g.sigmoid(o);
            let ig = g.mul(i, c_hat)?;
            let c = match cell {
                Some(cp) => {
                    let kept = g.mul(f, cp)?;
                    g.add(kept, ig)?
                }
                None => ig,
            };
            let tc = g.tanh(c);
            let ht = g.mul(o, tc)?;
            if let Some(gs) = gates.as_deref_mut() {
                gs.push(LstmGates {
                    input: i,
                    forget: f,
                    candidate: c_hat,
                    output: o,
                });
            }
            hidden = Some(ht);
            cell = Some(c);
            outputs.push(ht);
        }
        Ok(outputs)
    }
}

/// Stacked LSTM layers. All but the last emit full sequences; dropout sits
/// between consecutive layers.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
    pub dropout: f64,
}

impl LstmStack {
    pub fn output_size(&self) -> Option<usize> {
        self.layers.last().map(|l| l.hidden_size)
    }

    /// `F×T` in; `H` (last hidden state) or `H×T` out.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        return_last: bool,
        mode: &mut Mode,
        name: &str,
        trace: &mut Option<&mut Vec<TraceEntry>>,
    ) -> Result<Var> {
        let mut seq = x;
        let n = self.layers.len();
        for (j, layer) in self.layers.iter().enumerate() {
            if j > 0 {
                seq = dropout_apply(g, seq, self.dropout, mode)?;
            }
            let hs = layer.forward_sequence(g, seq, None)?;
            let out = if j + 1 == n && return_last {
                *hs.last().expect("sequence has at least one step")
            } else {
                g.stack_columns(&hs)?
            };
            record(g, trace, format!("{name}{j}"), seq, out);
            seq = out;
        }
        Ok(seq)
    }
}

/// Fully connected layer on a vector. `activation = None` leaves logits.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Option<Activation>,
    pub in_features: usize,
    pub out_features: usize,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        activation: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = glorot_uniform(&[out_features, in_features], in_features, out_features, rng);
        Ok(DenseLayer {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]))?,
            activation,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.shape(x) != [self.in_features] {
            return Err(Error::shape(
                "dense",
                format!("expected {} inputs, got {}", self.in_features, shape_string(g.shape(x))),
            ));
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(w, x)?;
        let z = g.add_bias(z, b, 0)?;
        match self.activation {
            Some(act) => g.activation(z, act, 0),
            None => Ok(z),
        }
    }
}

/// Per-frame 2D convolution over the electrode mesh.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    pub stride: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let area = size * size;
        let w = glorot_uniform(&[out_channels, in_channels, size, size], in_channels * area, out_channels * area, rng);
        Ok(Conv2dLayer {
            kernels: store.add(format!("{name}.kernels"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?,
            activation,
            in_channels,
            out_channels,
            size,
            stride,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.kernels);
        let b = g.param(self.bias);
        let y = g.conv2d_frames(x, w, b, self.stride)?;
        g.activation(y, self.activation, 1)
    }
}
