//! Complete classifiers assembled from a [`HyperConfig`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::config::{Family, HyperConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{
    dropout_apply, global_average_pool, record, Conv2dLayer, DenseLayer, IntertwinedModule, LstmLayer, LstmStack, Mode,
    SdConvLayer, TdFcLayer, TraceEntry,
};
use crate::mesh::MeshMap;
use crate::params::ParamStore;
use crate::plan::{plan_shapes, ShapePlan};
use crate::rng::{self, streams};
use crate::tensor::{shape_string, Tensor};

#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Vec<DenseLayer>,
    pub dropout: f64,
    pub output: DenseLayer,
}

impl Head {
    fn forward(&self, g: &mut Graph, mut x: Var, mode: &mut Mode, trace: &mut Option<&mut Vec<TraceEntry>>) -> Result<Var> {
        for (j, layer) in self.hidden.iter().enumerate() {
            let y = layer.forward(g, x)?;
            record(g, trace, format!("fc{j}"), x, y);
            x = dropout_apply(g, y, self.dropout, mode)?;
        }
        let logits = self.output.forward(g, x)?;
        record(g, trace, "output".into(), x, logits);
        Ok(logits)
    }
}

#[derive(Clone, Debug)]
pub struct ConvStack {
    pub mesh: MeshMap,
    pub layers: Vec<Conv2dLayer>,
}

impl ConvStack {
    /// `L×T` signals → `F×T` latent sequence.
    fn forward(&self, g: &mut Graph, input: &Tensor, prefix: &str, trace: &mut Option<&mut Vec<TraceEntry>>) -> Result<Var> {
        let raw = g.constant(input.clone());
        let frames = g.constant(self.mesh.frames(input)?);
        record(g, trace, format!("{prefix}mesh"), raw, frames);
        let mut x = frames;
        for (j, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(g, x)?;
            record(g, trace, format!("{prefix}conv{j}"), x, y);
            x = y;
        }
        let &[t, c, h, w] = g.shape(x) else {
            return Err(Error::shape("conv stack", "expected frame tensor"));
        };
        let flat = g.reshape(x, &[t, c * h * w])?;
        let latent = g.transpose(flat)?;
        record(g, trace, format!("{prefix}latent"), x, latent);
        Ok(latent)
    }
}

#[derive(Clone, Debug)]
pub enum Architecture {
    Intertwined {
        modules: Vec<IntertwinedModule>,
        lstm: LstmStack,
        head: Head,
    },
    Cascade {
        convs: ConvStack,
        cnn_fc: Vec<TdFcLayer>,
        lstm: LstmStack,
        head: Head,
    },
    Parallel {
        convs: ConvStack,
        lstm: LstmStack,
        head: Head,
    },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: HyperConfig,
    pub params: ParamStore,
    pub plan: ShapePlan,
    pub arch: Architecture,
}

/// Serialized form of a model: its configuration and parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: HyperConfig,
    pub params: ParamStore,
}

/// Builds any family; see [`build_intertwined`], [`build_cascade`], [`build_parallel`].
pub fn build_model(config: &HyperConfig, seed: u64) -> Result<Model> {
    match config.family {
        Family::Intertwined => build_intertwined(config, seed),
        Family::Cascade => build_cascade(config, seed),
        Family::Parallel => build_parallel(config, seed),
    }
}

fn lstm_stack(store: &mut ParamStore, prefix: &str, mut width: usize, widths: &[usize], dropout: f64, rng: &mut rng::RunRng) -> Result<(LstmStack, usize)> {
    let mut layers = Vec::with_capacity(widths.len());
    for (j, &h) in widths.iter().enumerate() {
        layers.push(LstmLayer::new(store, &format!("{prefix}lstm{j}"), width, h, rng)?);
        width = h;
    }
    Ok((LstmStack { layers, dropout }, width))
}

fn head(store: &mut ParamStore, config: &HyperConfig, mut width: usize, widths: &[usize], rng: &mut rng::RunRng) -> Result<Head> {
    let mut hidden = Vec::with_capacity(widths.len());
    for (j, &m) in widths.iter().enumerate() {
        hidden.push(DenseLayer::new(store, &format!("fc{j}"), width, m, Some(config.fc_act), rng)?);
        width = m;
    }
    Ok(Head {
        hidden,
        dropout: config.fc_drop,
        output: DenseLayer::new(store, "output", width, NUM_CLASSES, None, rng)?,
    })
}

fn conv_stack(store: &mut ParamStore, config: &HyperConfig, prefix: &str, rng: &mut rng::RunRng) -> Result<ConvStack> {
    let b = config.baseline_settings()?;
    let mut cin = 1;
    let mut layers = Vec::with_capacity(b.conv_layers);
    for j in 0..b.conv_layers {
        layers.push(Conv2dLayer::new(
            store,
            &format!("{prefix}conv{j}"),
            cin,
            b.conv_kernels,
            b.conv_size,
            b.conv_stride,
            b.conv_act,
            rng,
        )?);
        cin = b.conv_kernels;
    }
    Ok(ConvStack {
        mesh: b.mesh.clone(),
        layers,
    })
}

fn prepare(config: &HyperConfig, family: Family) -> Result<ShapePlan> {
    if config.family != family {
        return Err(Error::Config(format!(
            "expected a {} config, got {}",
            family.name(),
            config.family.name()
        )));
    }
    config.validate()?;
    plan_shapes(config)
}

pub fn build_intertwined(config: &HyperConfig, seed: u64) -> Result<Model> {
    let plan = prepare(config, Family::Intertwined)?;
    let mut rng = rng::stream(seed, streams::INIT);
    let mut store = ParamStore::new();
    let mut width = config.input_shape[0];
    let mut modules = Vec::with_capacity(config.mod_num);
    for i in 0..config.mod_num {
        let tdfc = TdFcLayer::new(&mut store, &format!("module{i}.tdfc"), width, config.td_fc_num[i], config.td_act, &mut rng)?;
        let sdc = SdConvLayer::new(
            &mut store,
            &format!("module{i}.sdc"),
            config.sdc_num[i],
            config.sdc_ker[i],
            config.sdc_act,
            &mut rng,
        )?;
        width = config.td_fc_num[i] * config.sdc_num[i];
        modules.push(IntertwinedModule {
            tdfc,
            sdc,
            pool_size: config.pool_size,
            pool_kind: config.pool_type,
        });
    }
    let (lstm, width) = lstm_stack(&mut store, "", width, config.lstm_widths(), config.ls_drop, &mut rng)?;
    let head = head(&mut store, config, width, config.fc_widths(), &mut rng)?;
    Ok(Model {
        config: config.clone(),
        params: store,
        plan,
        arch: Architecture::Intertwined { modules, lstm, head },
    })
}

/// Per-frame mesh convolutions, optional time-distributed FC layers, then
/// an LSTM stack (or global average pooling) and the dense head.
pub fn build_cascade(config: &HyperConfig, seed: u64) -> Result<Model> {
    let plan = prepare(config, Family::Cascade)?;
    let b = config.baseline_settings()?;
    let mut rng = rng::stream(seed, streams::INIT);
    let mut store = ParamStore::new();
    let convs = conv_stack(&mut store, config, "", &mut rng)?;
    let mut width = plan
        .entries
        .iter()
        .find(|e| e.name == "latent")
        .map(|e| e.output[0])
        .expect("cascade plans have a latent stage");
    let mut cnn_fc = Vec::with_capacity(b.fc_layers);
    for j in 0..b.fc_layers {
        cnn_fc.push(TdFcLayer::new(&mut store, &format!("cnn_fc{j}"), width, b.fc_units, config.fc_act, &mut rng)?);
        width = b.fc_units;
    }
    let (lstm, width) = lstm_stack(&mut store, "", width, &vec![b.lstm_units; b.lstm_layers], config.ls_drop, &mut rng)?;
    let head = head(&mut store, config, width, &vec![b.fc_units; b.fc_layers], &mut rng)?;
    Ok(Model {
        config: config.clone(),
        params: store,
        plan,
        arch: Architecture::Cascade { convs, cnn_fc, lstm, head },
    })
}

/// A time-averaged mesh-convolution branch and an LSTM branch over the raw
/// signals, concatenated before the dense head.
pub fn build_parallel(config: &HyperConfig, seed: u64) -> Result<Model> {
    let plan = prepare(config, Family::Parallel)?;
    let b = config.baseline_settings()?;
    let mut rng = rng::stream(seed, streams::INIT);
    let mut store = ParamStore::new();
    let convs = conv_stack(&mut store, config, "cnn.", &mut rng)?;
    let cnn_width = plan
        .entries
        .iter()
        .find(|e| e.name == "cnn.latent")
        .map(|e| e.output[0])
        .expect("parallel plans have a latent stage");
    let (lstm, rnn_width) = lstm_stack(
        &mut store,
        "rnn.",
        config.input_shape[0],
        &vec![b.lstm_units; b.lstm_layers],
        config.ls_drop,
        &mut rng,
    )?;
    let head = head(&mut store, config, cnn_width + rnn_width, &vec![b.fc_units; b.fc_layers], &mut rng)?;
    Ok(Model {
        config: config.clone(),
        params: store,
        plan,
        arch: Architecture::Parallel { convs, lstm, head },
    })
}

fn recurrent(
    g: &mut Graph,
    lstm: &LstmStack,
    x: Var,
    prefix: &str,
    mode: &mut Mode,
    trace: &mut Option<&mut Vec<TraceEntry>>,
) -> Result<Var> {
    if lstm.layers.is_empty() {
        let y = global_average_pool(g, x)?;
        record(g, trace, format!("{prefix}global_avg_pool"), x, y);
        Ok(y)
    } else {
        lstm.forward(g, x, true, mode, &format!("{prefix}lstm"), trace)
    }
}

impl Architecture {
    /// Logits for one trial; the caller checks the input shape.
    pub fn forward(&self, g: &mut Graph, input: &Tensor, mode: &mut Mode, mut trace: Option<&mut Vec<TraceEntry>>) -> Result<Var> {
        let trace = &mut trace;
        match self {
            Architecture::Intertwined { modules, lstm, head } => {
                let raw = g.constant(input.clone());
                let mut x = g.reshape(raw, input.shape())?;
                record(g, trace, "flatten".into(), raw, x);
                for (i, m) in modules.iter().enumerate() {
                    x = m.forward(g, x, i, trace)?;
                }
                let v = recurrent(g, lstm, x, "", mode, trace)?;
                head.forward(g, v, mode, trace)
            }
            Architecture::Cascade { convs, cnn_fc, lstm, head } => {
                let mut x = convs.forward(g, input, "", trace)?;
                for (j, layer) in cnn_fc.iter().enumerate() {
                    let y = layer.forward(g, x)?;
                    record(g, trace, format!("cnn_fc{j}"), x, y);
                    x = dropout_apply(g, y, head.dropout, mode)?;
                }
                let v = recurrent(g, lstm, x, "", mode, trace)?;
                head.forward(g, v, mode, trace)
            }
            Architecture::Parallel { convs, lstm, head } => {
                let latent = convs.forward(g, input, "cnn.", trace)?;
                let cnn = g.mean_last(latent)?;
                record(g, trace, "cnn.time_average".into(), latent, cnn);
                let raw = g.constant(input.clone());
                let rnn = recurrent(g, lstm, raw, "rnn.", mode, trace)?;
                let merged = g.concat(&[cnn, rnn])?;
                record(g, trace, "concat".into(), merged, merged);
                head.forward(g, merged, mode, trace)
            }
        }
    }
}

impl Model {
    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_snapshot(snapshot: ModelSnapshot) -> Result<Self> {
        let mut model = build_model(&snapshot.config, 0)?;
        let mut params = snapshot.params;
        params.rebuild()?;
        if params.len() != model.params.len()
            || params.ids().any(|id| {
                params.name(id) != model.params.name(id) || params.value(id).shape() != model.params.value(id).shape()
            })
        {
            return Err(Error::Data("snapshot parameters do not match its configuration".into()));
        }
        model.params = params;
        Ok(model)
    }

    /// Logits (length 6) for one `L×K` trial.
    pub fn forward(&self, g: &mut Graph, input: &Tensor, mode: &mut Mode, trace: Option<&mut Vec<TraceEntry>>) -> Result<Var> {
        let expected = self.config.input_shape;
        if input.shape() != expected {
            return Err(Error::shape(
                "model input",
                format!("expected {}, got {}", shape_string(&expected), shape_string(input.shape())),
            ));
        }
        self.arch.forward(g, input, mode, trace)
    }

    /// Class probabilities for one trial (evaluation mode).
    pub fn predict_proba(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::inference(self.params.values());
        let logits = self.forward(&mut g, input, &mut Mode::Eval, None)?;
        let p = g.softmax(logits, 0)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Stage shapes actually produced by a forward pass on `input`.
    pub fn trace_shapes(&self, input: &Tensor) -> Result<Vec<TraceEntry>> {
        let mut g = Graph::inference(self.params.values());
        let mut trace = Vec::new();
        self.forward(&mut g, input, &mut Mode::Eval, Some(&mut trace))?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, Coordinates};
    use crate::rng::stream;
    use rand::Rng;

    fn random_input(shape: [usize; 2], seed: u64) -> Tensor {
        let mut rng = stream(seed, 99);
        Tensor::new(shape.to_vec(), (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn assert_trace_matches_plan(model: &Model, input: &Tensor) {
        let trace = model.trace_shapes(input).unwrap();
        let planned: Vec<TraceEntry> = model
            .plan
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.input.clone(), e.output.clone()))
            .collect();
        assert_eq!(trace, planned);
    }

    #[test]
    fn intertwined_forward_matches_plan_and_is_distribution() {
        let cfg = HyperConfig::default();
        let model = build_model(&cfg, 1).unwrap();
        let x = random_input([19, 200], 1);
        assert_trace_matches_plan(&model, &x);
        let p = model.predict_proba(&x).unwrap();
        assert_eq!(p.len(), 6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn baselines_forward_matches_plan() {
        for fam in [Family::Cascade, Family::Parallel] {
            let x = random_input([19, 40], 2);
            let mut cfg = HyperConfig::baseline(fam);
            cfg.input_shape = [19, 40];
            let model = build_model(&cfg, 2).unwrap();
            assert_trace_matches_plan(&model, &x);
            let p = model.predict_proba(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn no_lstm_no_fc_parameter_layout() {
        let cfg = HyperConfig {
            ls_num: vec![0],
            fc_num: vec![0],
            ..HyperConfig::default()
        };
        let model = build_model(&cfg, 3).unwrap();
        let names: Vec<_> = model.params.ids().map(|id| model.params.name(id).to_string()).collect();
        assert_eq!(names.len(), 10);
        assert_eq!(&names[8..], ["output.weight", "output.bias"]);
        assert_eq!(model.params.value(model.params.id("output.weight").unwrap()).shape(), &[6, 256]);
    }

    #[test]
    fn parameter_count_matches_layers() {
        let model = build_model(&HyperConfig::default(), 4).unwrap();
        let expected = (16 * 19 + 16) + (16 * 3 + 16) + (16 * 256 + 16) + (16 * 3 + 16)
            + (4 * 50 * 256 + 4 * 50 * 50 + 200)
            + (30 * 50 + 30)
            + (6 * 30 + 6);
        assert_eq!(model.params.numel(), expected);
    }

    #[test]
    fn same_seed_same_parameters() {
        for fam in Family::ALL {
            let cfg = if fam == Family::Intertwined { HyperConfig::default() } else { HyperConfig::baseline(fam) };
            let a = build_model(&cfg, 7).unwrap();
            let b = build_model(&cfg, 7).unwrap();
            assert_eq!(a.params, b.params);
            let c = build_model(&cfg, 8).unwrap();
            assert_ne!(a.params, c.params);
        }
    }

    #[test]
    fn parallel_branches_are_independent_before_merge() {
        let mut cfg = HyperConfig::baseline(Family::Parallel);
        cfg.input_shape = [19, 30];
        let model = build_model(&cfg, 5).unwrap();
        let x = random_input([19, 30], 5);
        let merged = |m: &Model| {
            let mut g = Graph::inference(m.params.values());
            let mut trace = Vec::new();
            m.forward(&mut g, &x, &mut Mode::Eval, Some(&mut trace)).unwrap();
            // concat is the node right before the head
            let idx = (0..g.len()).rev().find(|&i| g.shape(Var(i)) == [256 + 50]).unwrap();
            g.value(Var(idx)).data().to_vec()
        };
        let full = merged(&model);
        let mut zeroed = model.clone();
        for id in zeroed.params.ids().collect::<Vec<_>>() {
            if zeroed.params.name(id).starts_with("cnn.") {
                zeroed.params.value_mut(id).data_mut().fill(0.0);
            }
        }
        let z = merged(&zeroed);
        assert_eq!(full[256..], z[256..]);
        assert!(z[..256].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snapshot_round_trip() {
        let model = build_model(&HyperConfig::default(), 6).unwrap();
        let json = serde_json::to_string(&model.snapshot()).unwrap();
        let back = Model::from_snapshot(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params, model.params);
        let x = random_input([19, 200], 6);
        assert_eq!(back.predict_proba(&x).unwrap(), model.predict_proba(&x).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_shape_error() {
        let model = build_model(&HyperConfig::default(), 1).unwrap();
        let x = Tensor::zeros(&[18, 200]);
        assert!(matches!(model.predict_proba(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn small_model_gradients() {
        let cfg = HyperConfig {
            custom: true,
            input_shape: [5, 20],
            td_fc_num: vec![3, 2],
            sdc_num: vec![2, 2],
            sdc_ker: vec![3, 2],
            ls_num: vec![4],
            fc_num: vec![5],
            ..HyperConfig::default()
        };
        let mut model = build_model(&cfg, 11).unwrap();
        let x = random_input([5, 20], 11);
        let arch = model.arch.clone();
        let report = finite_diff_check(
            |g| {
                let logits = arch.forward(g, &x, &mut Mode::Eval, None)?;
                g.softmax_cross_entropy(logits, 3)
            },
            &mut model.params,
            1e-4,
            Coordinates::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
