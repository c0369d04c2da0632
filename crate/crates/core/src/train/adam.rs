//! Adam with bias correction; state is plain tensors so it can be checkpointed.

use std::collections::{BTreeMap, HashMap};

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One update of `vars` with learning rate `lr`. Variables without a
    /// gradient are left untouched. `clip` bounds the global gradient norm.
    pub fn update(&mut self, vars: &[(String, Var)], grads: &GradStore, lr: f64, clip: Option<f64>) -> Result<f64> {
        let present: Vec<(&String, &Var, Tensor)> = vars
            .iter()
            .filter_map(|(n, v)| grads.get(v.as_tensor()).map(|g| (n, v, g.detach())))
            .collect();
        let mut sq = 0.0f64;
        for (_, _, g) in &present {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        let scale = match clip {
            Some(c) if norm > c && norm.is_finite() => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var, g) in present {
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let delta = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (delta * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(norm)
    }

    pub fn state_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, t) in &self.m {
            out.insert(format!("adam.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("adam.v.{k}"), t.clone());
        }
        out
    }

    pub fn from_state(step: u64, tensors: &HashMap<String, Tensor>) -> Self {
        let mut a = Adam {
            step,
            ..Adam::default()
        };
        for (k, t) in tensors {
            if let Some(n) = k.strip_prefix("adam.m.") {
                a.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = k.strip_prefix("adam.v.") {
                a.v.insert(n.to_string(), t.clone());
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn minimizes_quadratic() {
        let x = Var::from_tensor(&Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let vars = vec![("x".to_string(), x.clone())];
        let mut adam = Adam::default();
        for _ in 0..2000 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            adam.update(&vars, &g, 0.05, None).unwrap();
        }
        let v = x.as_tensor().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|a| a.abs() < 1e-3), "{v:?}");
    }

    #[test]
    fn first_step_moves_by_lr() {
        let x = Var::from_tensor(&Tensor::new(&[1.0f64], &Device::Cpu).unwrap()).unwrap();
        let vars = vec![("x".to_string(), x.clone())];
        let mut adam = Adam::default();
        let g = (x.as_tensor() * 5.0).unwrap().sum_all().unwrap().backward().unwrap();
        adam.update(&vars, &g, 0.1, None).unwrap();
        let v = x.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((v - 0.9).abs() < 1e-6);
    }
}
