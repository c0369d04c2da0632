//! Parameter storage and the small set of layers the networks are built from.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform(f64),
    Const(f64),
}

struct StoreInner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

/// Seeded parameter store keyed by module path (`"intra.enc.stage0.down.weight"`).
#[derive(Clone)]
pub struct VarStore {
    inner: Arc<Mutex<StoreInner>>,
    dtype: DType,
    device: Device,
}

impl VarStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(StoreInner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            path: String::new(),
        }
    }

    /// All parameters in path order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Parameters whose path starts with one of `prefixes` followed by a dot.
    pub fn vars_under(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars()
            .into_iter()
            .filter(|(k, _)| {
                prefixes
                    .iter()
                    .any(|p| k.starts_with(p) && k[p.len()..].starts_with('.'))
            })
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().unwrap().vars.get(name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(v) = inner.vars.get(&name) {
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Uniform(b) => (0..n).map(|_| inner.rng.gen_range(-b..=b)).collect(),
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name, var);
        Ok(out)
    }
}

/// A path prefix inside a [`VarStore`].
#[derive(Clone)]
pub struct Scope {
    store: VarStore,
    path: String,
}

impl Scope {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope {
        let path = if self.path.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.path, name.as_ref())
        };
        Scope {
            store: self.store.clone(),
            path,
        }
    }

    pub fn var(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.pp(name).path, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

/// 2-D convolution with "same" padding (`k / 2`) and a bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Self::with_init(s, cin, cout, k, stride, Init::Uniform(bound), Init::Uniform(bound))
    }

    /// Zero weights and bias: the layer starts as the constant-zero map.
    pub fn zeros(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Self::with_init(s, cin, cout, k, stride, Init::Const(0.0), Init::Const(0.0))
    }

    pub fn with_init(
        s: &Scope,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        w_init: Init,
        b_init: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: s.var("weight", &[cout, cin, k, k], w_init)?,
            bias: s.var("bias", &[cout], b_init)?,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let cout = self.bias.dim(0)?;
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, cout, 1, 1))?)?)
    }
}

/// `x + conv(relu(conv(x)))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    pub fn new(s: &Scope, ch: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(&s.pp("c1"), ch, ch, 3, 1)?,
            c2: Conv2d::new(&s.pp("c2"), ch, ch, 3, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c2.forward(&self.c1.forward(x)?.relu()?)?;
        Ok((x + h)?)
    }
}

/// Rearranges `(B, C*r*r, H, W)` into `(B, C, H*r, W*r)`.
pub fn depth_to_space(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let co = c / (r * r);
    Ok(x.reshape((b, co, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, co, h * r, w * r))?)
}

/// Sub-pixel x2 upsampling: convolution to `4 * cout` channels, then depth-to-space.
#[derive(Debug, Clone)]
pub struct Upsample2 {
    conv: Conv2d,
}

impl Upsample2 {
    pub fn new(s: &Scope, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&s.pp("conv"), cin, cout * 4, k, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depth_to_space(&self.conv.forward(x)?, 2)
    }
}

/// Embedded-Gaussian nonlocal block: `x + W_z(softmax(theta^T phi) g)`.
#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    pub theta: Conv2d,
    pub phi: Conv2d,
    pub g: Conv2d,
    pub out: Conv2d,
}

impl NonLocalBlock {
    pub fn new(s: &Scope, ch: usize) -> Result<Self> {
        let inner = (ch / 2).max(1);
        Ok(Self {
            theta: Conv2d::new(&s.pp("theta"), ch, inner, 1, 1)?,
            phi: Conv2d::new(&s.pp("phi"), ch, inner, 1, 1)?,
            g: Conv2d::new(&s.pp("g"), ch, inner, 1, 1)?,
            out: Conv2d::new(&s.pp("out"), inner, ch, 1, 1)?,
        })
    }

    /// Row-normalized affinity matrix `(B, HW, HW)`.
    pub fn affinity(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let theta = self.theta.forward(x)?;
        let inner = theta.dim(1)?;
        let theta = theta.reshape((b, inner, h * w))?.transpose(1, 2)?.contiguous()?;
        let phi = self.phi.forward(x)?.reshape((b, inner, h * w))?;
        let logits = theta.matmul(&phi)?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let att = self.affinity(x)?;
        let g = self.g.forward(x)?;
        let inner = g.dim(1)?;
        let g = g.reshape((b, inner, h * w))?.transpose(1, 2)?.contiguous()?;
        let y = att.matmul(&g)?.transpose(1, 2)?.reshape((b, inner, h, w))?;
        Ok((x + self.out.forward(&y)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Nonlocal attention module: mask branch starts with a nonlocal block.
    Nlam,
    /// Local attention module: purely convolutional mask branch.
    Lam,
}

/// Residual gating block `x * mask(x) + x` with `mask in (0, 1)`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub nonlocal: Option<NonLocalBlock>,
    pub mask_blocks: Vec<ResBlock>,
    pub gate: Conv2d,
}

impl AttentionBlock {
    pub fn new(s: &Scope, ch: usize, kind: AttentionKind, depth: usize) -> Result<Self> {
        let nonlocal = match kind {
            AttentionKind::Nlam => Some(NonLocalBlock::new(&s.pp("nonlocal"), ch)?),
            AttentionKind::Lam => None,
        };
        let mask_blocks = (0..depth)
            .map(|i| ResBlock::new(&s.pp(format!("mask{i}")), ch))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nonlocal,
            mask_blocks,
            gate: Conv2d::new(&s.pp("gate"), ch, ch, 1, 1)?,
        })
    }

    pub fn kind(&self) -> AttentionKind {
        if self.nonlocal.is_some() {
            AttentionKind::Nlam
        } else {
            AttentionKind::Lam
        }
    }

    /// Mask-branch logits computed from an already nonlocal-processed input.
    pub fn mask_logits_after_nonlocal(&self, m: &Tensor) -> Result<Tensor> {
        let mut m = m.clone();
        for b in &self.mask_blocks {
            m = b.forward(&m)?;
        }
        self.gate.forward(&m)
    }

    pub fn mask(&self, x: &Tensor) -> Result<Tensor> {
        let m = match &self.nonlocal {
            Some(nl) => nl.forward(x)?,
            None => x.clone(),
        };
        Ok(candle_nn::ops::sigmoid(&self.mask_logits_after_nonlocal(&m)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mask = self.mask(x)?;
        Ok(((x * mask)? + x)?)
    }
}

/// A stage block: a plain residual block or a local attention module.
#[derive(Debug, Clone)]
pub enum Block {
    Residual(ResBlock),
    LocalAttention(AttentionBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Residual,
    LocalAttention,
}

impl Block {
    pub fn new(s: &Scope, ch: usize, kind: BlockKind, attention_depth: usize) -> Result<Self> {
        Ok(match kind {
            BlockKind::Residual => Block::Residual(ResBlock::new(s, ch)?),
            BlockKind::LocalAttention => Block::LocalAttention(AttentionBlock::new(
                s,
                ch,
                AttentionKind::Lam,
                attention_depth,
            )?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Residual(b) => b.forward(x),
            Block::LocalAttention(b) => b.forward(x),
        }
    }
}

/// Convolutional LSTM cell with a 3x3 gate convolution.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub gates: Conv2d,
    hidden: usize,
}

impl ConvLstmCell {
    pub fn new(s: &Scope, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            gates: Conv2d::new(&s.pp("gates"), input + hidden, 4 * hidden, 3, 1)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step: returns `(h_t, c_t)`.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = self.gates.forward(&Tensor::cat(&[x, h], 1)?)?;
        let parts = z.chunk(4, 1)?;
        let i = candle_nn::ops::sigmoid(&parts[0])?;
        let f = candle_nn::ops::sigmoid(&parts[1])?;
        let o = candle_nn::ops::sigmoid(&parts[2])?;
        let g = parts[3].tanh()?;
        let c_next = ((f * c)? + (i * g)?)?;
        let h_next = (o * c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}

/// Average pooling with stride 2 (kernel 2).
pub fn pool2(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> VarStore {
        VarStore::new(1, DType::F64)
    }

    #[test]
    fn depth_to_space_layout() {
        let x = Tensor::arange(0f32, 8., &Device::Cpu)
            .unwrap()
            .reshape((1, 8, 1, 1))
            .unwrap();
        let y = depth_to_space(&x, 2).unwrap();
        assert_eq!(y.dims4().unwrap(), (1, 2, 2, 2));
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![0., 1., 2., 3., 4., 5., 6., 7.]);
    }

    #[test]
    fn store_is_seeded() {
        let a = VarStore::new(9, DType::F32);
        let b = VarStore::new(9, DType::F32);
        let ca = Conv2d::new(&a.root().pp("c"), 2, 3, 3, 1).unwrap();
        let cb = Conv2d::new(&b.root().pp("c"), 2, 3, 3, 1).unwrap();
        let va = ca.weight.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = cb.weight.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
        assert_eq!(a.vars_under(&["c"]).len(), 2);
        assert!(a.vars_under(&["x"]).is_empty());
    }

    #[test]
    fn gate_forced_closed_is_identity() {
        let s = store();
        for kind in [AttentionKind::Nlam, AttentionKind::Lam] {
            let blk = AttentionBlock::new(&s.root().pp(format!("{kind:?}")), 4, kind, 2).unwrap();
            let b = s
                .get(&format!("{kind:?}.gate.bias"))
                .unwrap();
            b.set(&Tensor::full(-1e9f64, 4, &Device::Cpu).unwrap()).unwrap();
            let x = Tensor::randn(0f64, 1.0, (1, 4, 5, 6), &Device::Cpu).unwrap();
            let y = blk.forward(&x).unwrap();
            let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert_eq!(diff, 0.0);
        }
    }

    #[test]
    fn mask_in_open_unit_interval() {
        let s = store();
        let blk = AttentionBlock::new(&s.root(), 6, AttentionKind::Nlam, 3).unwrap();
        let x = Tensor::randn(0f64, 3.0, (1, 6, 4, 4), &Device::Cpu).unwrap();
        let m = blk.mask(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn nonlocal_on_constant_input_matches_uniform_affinity() {
        // Constant input makes every affinity row uniform, so the nonlocal
        // block reduces to x + W_z(g(x)) pointwise.
        let s = store();
        let blk = AttentionBlock::new(&s.root(), 4, AttentionKind::Nlam, 3).unwrap();
        let nl = blk.nonlocal.as_ref().unwrap();
        let x = Tensor::full(0.7f64, (1, 4, 3, 5), &Device::Cpu).unwrap();
        let att = nl.affinity(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(att.iter().all(|&a| (a - 1.0 / 15.0).abs() < 1e-12));
        let closed = (&x + nl.out.forward(&nl.g.forward(&x).unwrap()).unwrap()).unwrap();
        let mask = candle_nn::ops::sigmoid(&blk.mask_logits_after_nonlocal(&closed).unwrap()).unwrap();
        let expect = ((&x * mask).unwrap() + &x).unwrap();
        let got = blk.forward(&x).unwrap();
        let diff = (got - expect).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn convlstm_zero_gates_bounded() {
        let s = store();
        let cell = ConvLstmCell::new(&s.root(), 3, 3).unwrap();
        for (_, v) in s.vars() {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let z = Tensor::zeros((1, 3, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let (h, c) = cell.step(&z, &z, &z).unwrap();
        let hv = h.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(hv.iter().all(|v| v.abs() < 1.0));
        assert_eq!(c.dims4().unwrap(), (1, 3, 4, 4));
    }
}
