//! Discrete hyperparameter search spaces and seeded sampling from them.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, PoolKind};
use crate::config::{BaselineConfig, Family, HyperConfig, Minimizer};
use crate::error::{Error, Result};
use crate::plan::plan_shapes;

/// Consecutive infeasible draws tolerated before giving up.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntertwinedSpace {
    pub mod_num: Vec<usize>,
    pub td_fc_num: Vec<usize>,
    pub td_act: Vec<Activation>,
    pub sdc_num: Vec<usize>,
    pub sdc_ker: Vec<usize>,
    pub sdc_act: Vec<Activation>,
    pub pool_size: Vec<usize>,
    pub pool_type: Vec<PoolKind>,
    pub ls_num: Vec<usize>,
    /// Length of the sampled LSnum vector.
    pub ls_slots: usize,
    pub fc_num: Vec<usize>,
    /// Length of the sampled FCnum vector.
    pub fc_slots: usize,
    pub fc_act: Vec<Activation>,
    pub minimizer: Vec<Minimizer>,
    pub ls_drop: f64,
    pub fc_drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpace {
    pub conv_kernels: Vec<usize>,
    pub conv_size: Vec<usize>,
    pub conv_stride: Vec<usize>,
    pub conv_layers: Vec<usize>,
    pub lstm_units: Vec<usize>,
    pub lstm_layers: Vec<usize>,
    pub fc_layers: Vec<usize>,
    pub fc_units: Vec<usize>,
    pub conv_act: Activation,
    pub fc_act: Activation,
    pub minimizer: Minimizer,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub intertwined: IntertwinedSpace,
    pub cascade: BaselineSpace,
    pub parallel: BaselineSpace,
}

impl SearchSpace {
    pub fn standard() -> Self {
        let acts = Activation::ALL.to_vec();
        let baseline = |fc_layers: Vec<usize>| BaselineSpace {
            conv_kernels: vec![16, 24, 48, 92],
            conv_size: vec![2, 3],
            conv_stride: vec![1, 2],
            conv_layers: vec![1, 2, 3],
            lstm_units: vec![10, 50, 100],
            lstm_layers: vec![0, 1, 2, 3],
            fc_layers,
            fc_units: vec![10, 50, 100],
            conv_act: Activation::Relu,
            fc_act: Activation::Relu,
            minimizer: Minimizer::Rmsprop,
            dropout: 0.1,
        };
        SearchSpace {
            intertwined: IntertwinedSpace {
                mod_num: vec![2, 3, 4],
                td_fc_num: vec![16, 24, 50, 80],
                td_act: acts.clone(),
                sdc_num: vec![16, 24, 50, 80],
                sdc_ker: vec![2, 3, 4, 5],
                sdc_act: acts.clone(),
                pool_size: vec![2, 3, 4],
                pool_type: vec![PoolKind::Max, PoolKind::Average],
                ls_num: vec![0, 30, 50, 100, 200],
                ls_slots: 2,
                fc_num: vec![0, 30, 50, 100],
                fc_slots: 2,
                fc_act: acts,
                minimizer: vec![Minimizer::Sgd, Minimizer::Rmsprop],
                ls_drop: 0.1,
                fc_drop: 0.1,
            },
            cascade: baseline(vec![0, 1, 2]),
            parallel: baseline(vec![0, 1, 2, 3]),
        }
    }

    pub fn baseline_space(&self, family: Family) -> Option<&BaselineSpace> {
        match family {
            Family::Intertwined => None,
            Family::Cascade => Some(&self.cascade),
            Family::Parallel => Some(&self.parallel),
        }
    }

    /// Every value of `config` that the search space governs lies in its set.
    pub fn check_membership(&self, config: &HyperConfig) -> Result<()> {
        fn member<T: PartialEq + std::fmt::Debug>(name: &str, value: &T, set: &[T]) -> Result<()> {
            if set.contains(value) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {value:?} is outside the search space {set:?}")))
            }
        }
        fn all<T: PartialEq + std::fmt::Debug>(name: &str, values: &[T], set: &[T]) -> Result<()> {
            values.iter().try_for_each(|v| member(name, v, set))
        }
        match self.baseline_space(config.family) {
            None => {
                let s = &self.intertwined;
                let m = config.mod_num;
                member("modNum", &m, &s.mod_num)?;
                all("tdFCnum", &config.td_fc_num[..m], &s.td_fc_num)?;
                member("tdNact", &config.td_act, &s.td_act)?;
                all("sdCnum", &config.sdc_num[..m], &s.sdc_num)?;
                all("sdCker", &config.sdc_ker[..m], &s.sdc_ker)?;
                member("sdCact", &config.sdc_act, &s.sdc_act)?;
                member("poolSize", &config.pool_size, &s.pool_size)?;
                member("pooltype", &config.pool_type, &s.pool_type)?;
                all("LSnum", &config.ls_num, &s.ls_num)?;
                all("FCnum", &config.fc_num, &s.fc_num)?;
                member("FCact", &config.fc_act, &s.fc_act)?;
                member("minimizer", &config.minimizer, &s.minimizer)?;
                member("LSdrop", &config.ls_drop, &[s.ls_drop])?;
                member("FCdrop", &config.fc_drop, &[s.fc_drop])?;
            }
            Some(s) => {
                let b = config.baseline_settings()?;
                member("conv_kernels", &b.conv_kernels, &s.conv_kernels)?;
                member("conv_size", &b.conv_size, &s.conv_size)?;
                member("conv_stride", &b.conv_stride, &s.conv_stride)?;
                member("conv_layers", &b.conv_layers, &s.conv_layers)?;
                member("lstm_units", &b.lstm_units, &s.lstm_units)?;
                member("lstm_layers", &b.lstm_layers, &s.lstm_layers)?;
                member("fc_layers", &b.fc_layers, &s.fc_layers)?;
                member("fc_units", &b.fc_units, &s.fc_units)?;
            }
        }
        Ok(())
    }

    /// One independent uniform draw per hyperparameter (per module index
    /// for the module lists). No feasibility check.
    pub fn draw(&self, family: Family, input_shape: [usize; 2], rng: &mut impl Rng) -> HyperConfig {
        fn pick<T: Copy>(set: &[T], rng: &mut impl Rng) -> T {
            *set.choose(rng).expect("search-space sets are nonempty")
        }
        match self.baseline_space(family) {
            None => {
                let s = &self.intertwined;
                let mod_num = pick(&s.mod_num, rng);
                let per_module = |set: &[usize], rng: &mut _| (0..mod_num).map(|_| pick(set, rng)).collect::<Vec<_>>();
                let td_fc_num = per_module(&s.td_fc_num, rng);
                let td_act = pick(&s.td_act, rng);
                let sdc_num = per_module(&s.sdc_num, rng);
                let sdc_ker = per_module(&s.sdc_ker, rng);
                HyperConfig {
                    family,
                    mod_num,
                    td_fc_num,
                    td_act,
                    sdc_num,
                    sdc_ker,
                    sdc_act: pick(&s.sdc_act, rng),
                    pool_size: pick(&s.pool_size, rng),
                    pool_type: pick(&s.pool_type, rng),
                    ls_num: (0..s.ls_slots).map(|_| pick(&s.ls_num, rng)).collect(),
                    ls_drop: s.ls_drop,
                    fc_num: (0..s.fc_slots).map(|_| pick(&s.fc_num, rng)).collect(),
                    fc_act: pick(&s.fc_act, rng),
                    fc_drop: s.fc_drop,
                    minimizer: pick(&s.minimizer, rng),
                    input_shape,
                    ..HyperConfig::default()
                }
            }
            Some(s) => HyperConfig {
                family,
                fc_act: s.fc_act,
                minimizer: s.minimizer,
                ls_drop: s.dropout,
                fc_drop: s.dropout,
                input_shape,
                baseline: Some(BaselineConfig {
                    conv_kernels: pick(&s.conv_kernels, rng),
                    conv_size: pick(&s.conv_size, rng),
                    conv_stride: pick(&s.conv_stride, rng),
                    conv_layers: pick(&s.conv_layers, rng),
                    lstm_units: pick(&s.lstm_units, rng),
                    lstm_layers: pick(&s.lstm_layers, rng),
                    fc_layers: pick(&s.fc_layers, rng),
                    fc_units: pick(&s.fc_units, rng),
                    conv_act: s.conv_act,
                    ..BaselineConfig::default()
                }),
                ..HyperConfig::default()
            },
        }
    }

    /// Every configuration of a baseline family, in a fixed order.
    pub fn baseline_grid(&self, family: Family, input_shape: [usize; 2]) -> Vec<HyperConfig> {
        let Some(s) = self.baseline_space(family) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for &conv_kernels in &s.conv_kernels {
            for &conv_size in &s.conv_size {
                for &conv_stride in &s.conv_stride {
                    for &conv_layers in &s.conv_layers {
                        for &lstm_units in &s.lstm_units {
                            for &lstm_layers in &s.lstm_layers {
                                for &fc_layers in &s.fc_layers {
                                    for &fc_units in &s.fc_units {
                                        let cfg = HyperConfig {
                                            family,
                                            fc_act: s.fc_act,
                                            minimizer: s.minimizer,
                                            ls_drop: s.dropout,
                                            fc_drop: s.dropout,
                                            input_shape,
                                            baseline: Some(BaselineConfig {
                                                conv_kernels,
                                                conv_size,
                                                conv_stride,
                                                conv_layers,
                                                lstm_units,
                                                lstm_layers,
                                                fc_layers,
                                                fc_units,
                                                conv_act: s.conv_act,
                                                ..BaselineConfig::default()
                                            }),
                                            ..HyperConfig::default()
                                        };
                                        let mut cfg = cfg;
                                        flag_custom(&mut cfg);
                                        if plan_shapes(&cfg).is_ok() {
                                            out.push(cfg);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Marks configurations drawn from a narrowed or widened space as custom
/// so they validate outside the standard value sets.
fn flag_custom(config: &mut HyperConfig) {
    if SearchSpace::standard().check_membership(config).is_err() {
        config.custom = true;
    }
}

/// A feasible configuration and how many draws were rejected before it.
#[derive(Clone, Debug)]
pub struct Sampled {
    pub config: HyperConfig,
    pub rejected: usize,
}

/// Draws until the configuration plans successfully and, when `max_macs`
/// is set, its forward cost per trial is within the cap.
pub fn sample_config(
    space: &SearchSpace,
    family: Family,
    input_shape: [usize; 2],
    max_macs: Option<u64>,
    rng: &mut impl Rng,
) -> Result<Sampled> {
    for rejected in 0..=MAX_REJECTIONS {
        let mut config = space.draw(family, input_shape, rng);
        flag_custom(&mut config);
        let Ok(plan) = plan_shapes(&config) else {
            continue;
        };
        if max_macs.is_some_and(|cap| plan.total_macs() > cap) {
            continue;
        }
        return Ok(Sampled { config, rejected });
    }
    Err(Error::DegenerateSpace(MAX_REJECTIONS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sampled_configs_are_members_and_feasible() {
        let space = SearchSpace::standard();
        let mut rng = stream(1, 0);
        for fam in Family::ALL {
            for _ in 0..100 {
                let s = sample_config(&space, fam, [19, 200], None, &mut rng).unwrap();
                s.config.validate().unwrap();
                plan_shapes(&s.config).unwrap();
            }
        }
    }

    #[test]
    fn same_seed_same_config() {
        let space = SearchSpace::standard();
        let a = sample_config(&space, Family::Intertwined, [19, 200], None, &mut stream(9, 0)).unwrap();
        let b = sample_config(&space, Family::Intertwined, [19, 200], None, &mut stream(9, 0)).unwrap();
        assert_eq!(a.config, b.config);
    }

    #[test]
    fn pool_type_draws_are_balanced() {
        let space = SearchSpace::standard();
        let mut rng = stream(2, 0);
        let n = 10_000;
        let max = (0..n)
            .filter(|_| space.draw(Family::Intertwined, [19, 200], &mut rng).pool_type == PoolKind::Max)
            .count();
        let frac = max as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn impossible_input_is_degenerate() {
        let space = SearchSpace::standard();
        let mut rng = stream(3, 0);
        let err = sample_config(&space, Family::Intertwined, [19, 3], None, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpace(MAX_REJECTIONS)));
    }

    #[test]
    fn cost_cap_is_respected() {
        let space = SearchSpace::standard();
        let mut rng = stream(4, 0);
        for _ in 0..50 {
            let s = sample_config(&space, Family::Intertwined, [19, 200], Some(20_000_000), &mut rng).unwrap();
            assert!(plan_shapes(&s.config).unwrap().total_macs() <= 20_000_000);
        }
    }

    #[test]
    fn cascade_grid_is_complete() {
        let space = SearchSpace::standard();
        let grid = space.baseline_grid(Family::Cascade, [19, 200]);
        assert_eq!(grid.len(), 4 * 2 * 2 * 3 * 3 * 4 * 3 * 3 - infeasible_count(&space));
    }

    fn infeasible_count(space: &SearchSpace) -> usize {
        // 3 stride-2 layers of size 3 do not fit a 5×5 mesh; size 2 with
        // stride 2 three times does not either.
        let s = &space.cascade;
        let mut n = 0;
        for &size in &s.conv_size {
            for &stride in &s.conv_stride {
                for &layers in &s.conv_layers {
                    let mut side = 5usize;
                    let mut ok = true;
                    for _ in 0..layers {
                        if side < size {
                            ok = false;
                            break;
                        }
                        side = (side - size) / stride + 1;
                    }
                    if !ok {
                        n += s.conv_kernels.len() * s.lstm_units.len() * s.lstm_layers.len() * s.fc_layers.len() * s.fc_units.len();
                    }
                }
            }
        }
        n
    }
}
