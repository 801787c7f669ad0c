//! Named parameter store with seeded initialization.
//!
//! Candle's CPU device has no seedable RNG, so initial values are drawn here
//! from a ChaCha stream in parameter-creation order. Two models built from the
//! same spec and seed are therefore bit-identical.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const RUNNING_STATS: [&str; 2] = ["running_mean", "running_var"];

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
        }
    }

    pub fn var_builder(&self) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), DType::F32, Device::Cpu)
    }

    /// All variables sorted by name, including batch-norm running statistics.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Variables updated by gradient descent (running statistics excluded).
    pub fn trainable(&self) -> Vec<Var> {
        self.named_vars()
            .into_iter()
            .filter(|(name, _)| !RUNNING_STATS.iter().any(|s| name.ends_with(s)))
            .map(|(_, v)| v)
            .collect()
    }

    pub fn get_var(&self, name: &str) -> Option<Var> {
        self.inner.lock().expect("param store poisoned").vars.get(name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.trainable().iter().map(|v| v.elem_count()).sum()
    }
}

fn sample(rng: &mut ChaCha8Rng, shape: &Shape, init: Init) -> candle_core::Result<Vec<f32>> {
    let n = shape.elem_count();
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, up: f64| -> Vec<f32> {
        (0..n).map(|_| rng.random_range(lo..up) as f32).collect()
    };
    let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| -> candle_core::Result<Vec<f32>> {
        let dist = Normal::new(mean, std).map_err(candle_core::Error::wrap)?;
        Ok((0..n).map(|_| dist.sample(rng) as f32).collect())
    };
    match init {
        Init::Const(v) => Ok(vec![v as f32; n]),
        Init::Uniform { lo, up } => Ok(uniform(rng, lo, up)),
        Init::Randn { mean, stdev } => normal(rng, mean, stdev),
        Init::Kaiming {
            dist,
            fan,
            non_linearity,
        } => {
            let fan = match fan {
                FanInOut::FanIn | FanInOut::FanOut => fan.for_shape(shape).max(1),
            };
            let std = non_linearity.gain() / (fan as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    Ok(uniform(rng, -bound, bound))
                }
                NormalOrUniform::Normal => normal(rng, 0.0, std),
            }
        }
    }
}

impl SimpleBackend for ParamStore {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let mut inner = self.inner.lock().expect("param store poisoned");
        if let Some(var) = inner.vars.get(name) {
            if var.shape() != &s {
                candle_core::bail!("parameter {name}: shape {:?} requested, {:?} stored", s, var.shape());
            }
            return Ok(var.as_tensor().clone());
        }
        let data = sample(&mut inner.rng, &s, h)?;
        let tensor = Tensor::from_vec(data, s, dev)?.to_dtype(dtype)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        let inner = self.inner.lock().expect("param store poisoned");
        match inner.vars.get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("unknown parameter {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.inner.lock().expect("param store poisoned").vars.contains_key(name)
    }
}
