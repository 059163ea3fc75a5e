//! Symbolic shape propagation. A plan is derived from a configuration
//! alone, before any parameter is allocated, and the model's forward pass
//! records the same stage names so the two can be compared.

use serde::{Deserialize, Serialize};

use crate::config::{Family, HyperConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::shape_string;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Main,
    Cnn,
    Rnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    /// Multiply-accumulates of one forward pass through this stage.
    pub macs: u64,
    pub branch: Branch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapePlan {
    pub input: [usize; 2],
    pub entries: Vec<PlanEntry>,
}

impl ShapePlan {
    pub fn total_macs(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    pub fn output(&self) -> &[usize] {
        &self.entries.last().expect("plans are never empty").output
    }

    /// Checks that each stage consumes what the previous stage of its branch
    /// produced and that the plan ends in the class vector.
    pub fn check_chain(&self) -> Result<()> {
        let start = self.input.to_vec();
        let (mut main, mut cnn, mut rnn) = (start.clone(), start.clone(), start);
        for e in &self.entries {
            let expected = match (e.branch, e.name.as_str()) {
                (Branch::Main, "concat") => vec![cnn[0] + rnn[0]],
                (Branch::Main, _) => main.clone(),
                (Branch::Cnn, _) => cnn.clone(),
                (Branch::Rnn, _) => rnn.clone(),
            };
            if e.input != expected {
                return Err(Error::shape(
                    "plan",
                    format!(
                        "stage '{}' expects {} but receives {}",
                        e.name,
                        shape_string(&e.input),
                        shape_string(&expected)
                    ),
                ));
            }
            let slot = match e.branch {
                Branch::Main => &mut main,
                Branch::Cnn => &mut cnn,
                Branch::Rnn => &mut rnn,
            };
            *slot = e.output.clone();
        }
        if self.output() != [NUM_CLASSES] {
            return Err(Error::shape("plan", format!("final output is {}", shape_string(self.output()))));
        }
        Ok(())
    }

    /// One-line summary such as `19×200 → 16×200 → … → 256×48 → LSTM → FC → 6`.
    pub fn summary(&self) -> String {
        let mut parts = vec![shape_string(&self.input)];
        for e in &self.entries {
            let stage = e.name.rsplit('.').next().unwrap_or(&e.name);
            let label = if stage.starts_with("lstm") {
                "LSTM".to_string()
            } else if stage.starts_with("fc") || stage.starts_with("cnn_fc") {
                "FC".to_string()
            } else {
                shape_string(&e.output)
            };
            if parts.last() != Some(&label) {
                parts.push(label);
            }
        }
        parts.join(" → ")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<20} {:>14} → {:<14} {:>12}\n",
                e.name,
                shape_string(&e.input),
                shape_string(&e.output),
                e.macs
            ));
        }
        out.push_str(&format!("total MACs per trial: {}\n", self.total_macs()));
        out
    }
}

struct Builder {
    entries: Vec<PlanEntry>,
}

impl Builder {
    fn push(&mut self, branch: Branch, name: impl Into<String>, input: &[usize], output: &[usize], macs: usize) {
        self.entries.push(PlanEntry {
            name: name.into(),
            input: input.to_vec(),
            output: output.to_vec(),
            macs: macs as u64,
            branch,
        });
    }

    /// LSTM stack over an `F×T` sequence ending in a vector, or global
    /// average pooling when there are no layers.
    fn recurrent(&mut self, branch: Branch, prefix: &str, mut shape: Vec<usize>, widths: &[usize]) -> Vec<usize> {
        if widths.is_empty() {
            let out = vec![shape[0]];
            self.push(branch, format!("{prefix}global_avg_pool"), &shape, &out, 0);
            return out;
        }
        for (j, &h) in widths.iter().enumerate() {
            let (f, t) = (shape[0], shape[1]);
            let out = if j + 1 == widths.len() { vec![h] } else { vec![h, t] };
            self.push(branch, format!("{prefix}lstm{j}"), &shape, &out, 4 * h * (f + h) * t);
            shape = out;
        }
        shape
    }

    fn dense_head(&mut self, mut width: usize, widths: &[usize]) {
        for (j, &m) in widths.iter().enumerate() {
            self.push(Branch::Main, format!("fc{j}"), &[width], &[m], width * m);
            width = m;
        }
        self.push(Branch::Main, "output", &[width], &[NUM_CLASSES], width * NUM_CLASSES);
    }

    /// Mesh frames through the conv stack to an `F×T` latent sequence.
    fn conv_stack(&mut self, branch: Branch, prefix: &str, config: &HyperConfig) -> Result<Vec<usize>> {
        let b = config.baseline_settings()?;
        let [l, k] = config.input_shape;
        let (rows, cols) = (b.mesh.rows, b.mesh.cols);
        let mut shape = vec![k, 1, rows, cols];
        self.push(branch, format!("{prefix}mesh"), &[l, k], &shape, 0);
        for j in 0..b.conv_layers {
            let (cin, h, w) = (shape[1], shape[2], shape[3]);
            if h < b.conv_size || w < b.conv_size {
                return Err(Error::Infeasible {
                    module: j,
                    detail: format!("{h}×{w} mesh is smaller than {0}×{0} kernels", b.conv_size),
                });
            }
            let oh = (h - b.conv_size) / b.conv_stride + 1;
            let ow = (w - b.conv_size) / b.conv_stride + 1;
            let out = vec![k, b.conv_kernels, oh, ow];
            let macs = k * b.conv_kernels * cin * b.conv_size * b.conv_size * oh * ow;
            self.push(branch, format!("{prefix}conv{j}"), &shape, &out, macs);
            shape = out;
        }
        let latent = vec![shape[1] * shape[2] * shape[3], k];
        self.push(branch, format!("{prefix}latent"), &shape, &latent, 0);
        Ok(latent)
    }
}

/// Stage-by-stage shapes for `config`, failing on the first stage whose
/// time (or mesh) extent collapses.
pub fn plan_shapes(config: &HyperConfig) -> Result<ShapePlan> {
    let [l, k] = config.input_shape;
    if l == 0 || k == 0 {
        return Err(Error::Config("input shape must be nonzero".into()));
    }
    let mut b = Builder { entries: Vec::new() };
    match config.family {
        Family::Intertwined => {
            b.push(Branch::Main, "flatten", &[l, k], &[l, k], 0);
            let (mut s, mut t) = (l, k);
            for i in 0..config.mod_num {
                let td = *config.td_fc_num.get(i).ok_or_else(|| missing("tdFCnum", i))?;
                let c = *config.sdc_num.get(i).ok_or_else(|| missing("sdCnum", i))?;
                let ker = *config.sdc_ker.get(i).ok_or_else(|| missing("sdCker", i))?;
                let pool = config.pool_size.max(1);
                if t < ker {
                    return Err(Error::Infeasible {
                        module: i,
                        detail: format!("time extent {t} is shorter than kernel size {ker}"),
                    });
                }
                let conv_t = t - ker + 1;
                let pooled = conv_t / pool;
                if pooled == 0 {
                    return Err(Error::Infeasible {
                        module: i,
                        detail: format!("pooling {conv_t} steps by {pool} leaves nothing"),
                    });
                }
                b.push(Branch::Main, format!("module{i}.tdfc"), &[s, t], &[td, t], td * s * t);
                b.push(Branch::Main, format!("module{i}.sdc"), &[td, t], &[td, c, conv_t], td * c * ker * conv_t);
                b.push(Branch::Main, format!("module{i}.pool"), &[td, c, conv_t], &[td, c, pooled], 0);
                b.push(Branch::Main, format!("module{i}.flatten"), &[td, c, pooled], &[td * c, pooled], 0);
                (s, t) = (td * c, pooled);
            }
            let v = b.recurrent(Branch::Main, "", vec![s, t], config.lstm_widths());
            b.dense_head(v[0], config.fc_widths());
        }
        Family::Cascade => {
            let bs = config.baseline_settings()?;
            let mut seq = b.conv_stack(Branch::Main, "", config)?;
            for j in 0..bs.fc_layers {
                let out = vec![bs.fc_units, k];
                b.push(Branch::Main, format!("cnn_fc{j}"), &seq, &out, seq[0] * bs.fc_units * k);
                seq = out;
            }
            let widths = vec![bs.lstm_units; bs.lstm_layers];
            let v = b.recurrent(Branch::Main, "", seq, &widths);
            b.dense_head(v[0], &vec![bs.fc_units; bs.fc_layers]);
        }
        Family::Parallel => {
            let bs = config.baseline_settings()?;
            let seq = b.conv_stack(Branch::Cnn, "cnn.", config)?;
            b.push(Branch::Cnn, "cnn.time_average", &seq, &[seq[0]], 0);
            let widths = vec![bs.lstm_units; bs.lstm_layers];
            let r = b.recurrent(Branch::Rnn, "rnn.", vec![l, k], &widths);
            let merged = seq[0] + r[0];
            b.push(Branch::Main, "concat", &[merged], &[merged], 0);
            b.dense_head(merged, &vec![bs.fc_units; bs.fc_layers]);
        }
    }
    let plan = ShapePlan {
        input: [l, k],
        entries: b.entries,
    };
    plan.check_chain()?;
    Ok(plan)
}

fn missing(field: &str, index: usize) -> Error {
    Error::Config(format!("{field} has no entry for module {index}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperConfig;

    fn shapes(plan: &ShapePlan, name: &str) -> (Vec<usize>, Vec<usize>) {
        let e = plan.entries.iter().find(|e| e.name == name).unwrap();
        (e.input.clone(), e.output.clone())
    }

    #[test]
    fn default_intertwined_chain() {
        let plan = plan_shapes(&HyperConfig::default()).unwrap();
        assert_eq!(plan.entries[0].name, "flatten");
        assert_eq!(plan.entries[0].input, vec![19, 200]);
        assert_eq!(plan.entries[0].output, vec![19, 200]);
        assert_eq!(shapes(&plan, "module0.tdfc").1, vec![16, 200]);
        assert_eq!(shapes(&plan, "module0.sdc").1, vec![16, 16, 198]);
        assert_eq!(shapes(&plan, "module0.flatten").1, vec![256, 99]);
        assert_eq!(shapes(&plan, "module1.flatten").1, vec![256, 48]);
        assert_eq!(shapes(&plan, "lstm0"), (vec![256, 48], vec![50]));
        assert!(plan.summary().ends_with("256×48 → LSTM → FC → 6"), "{}", plan.summary());
    }

    #[test]
    fn collapsing_time_names_the_module() {
        let cfg = HyperConfig {
            mod_num: 4,
            td_fc_num: vec![16; 4],
            sdc_num: vec![16; 4],
            sdc_ker: vec![5; 4],
            pool_size: 4,
            ..HyperConfig::default()
        };
        let err = plan_shapes(&cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible { module: 3, .. }), "{err}");

        let three = HyperConfig { mod_num: 3, ..cfg };
        let plan = plan_shapes(&three).unwrap();
        assert_eq!(shapes(&plan, "module0.pool").1[2], 49);
        assert_eq!(shapes(&plan, "module1.pool").1[2], 11);
        assert_eq!(shapes(&plan, "module2.pool").1[2], 1);
    }

    #[test]
    fn no_lstm_no_fc_goes_straight_to_output() {
        let cfg = HyperConfig {
            ls_num: vec![0],
            fc_num: vec![0],
            ..HyperConfig::default()
        };
        let plan = plan_shapes(&cfg).unwrap();
        let names: Vec<_> = plan.entries.iter().skip(9).map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["global_avg_pool", "output"]);
        assert_eq!(shapes(&plan, "output"), (vec![256], vec![6]));
    }

    #[test]
    fn cascade_latent_width() {
        let plan = plan_shapes(&HyperConfig::baseline(Family::Cascade)).unwrap();
        assert_eq!(shapes(&plan, "conv0").1, vec![200, 16, 4, 4]);
        assert_eq!(shapes(&plan, "latent").1, vec![256, 200]);
    }

    #[test]
    fn parallel_concat_width() {
        let mut cfg = HyperConfig::baseline(Family::Parallel);
        cfg.baseline.as_mut().unwrap().lstm_units = 100;
        let plan = plan_shapes(&cfg).unwrap();
        assert_eq!(shapes(&plan, "concat").0, vec![356]);
        assert_eq!(shapes(&plan, "rnn.lstm0").0, vec![19, 200]);
    }

    #[test]
    fn oversized_mesh_kernels_are_infeasible() {
        let mut cfg = HyperConfig::baseline(Family::Cascade);
        let b = cfg.baseline.as_mut().unwrap();
        b.conv_size = 3;
        b.conv_stride = 2;
        b.conv_layers = 3;
        assert!(matches!(plan_shapes(&cfg), Err(Error::Infeasible { module: 1, .. })));
    }
}
