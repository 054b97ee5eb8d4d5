//! Layers: thin structs that register parameters in a [`ParamStore`] and
//! build forward graphs on a [`Tape`] through a [`Session`].

use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::tape::Var;
use crate::tensor::Scalar;

/// Fully connected `y = x W + b` applied to rows of `x: (n, in_dim)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        store.init_uniform(
            format!("{}.w", self.name),
            vec![self.in_dim, self.out_dim],
            self.in_dim,
            seed,
        )?;
        store.init_zeros(format!("{}.b", self.name), vec![self.out_dim])
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.w", self.name))?;
        let b = s.param(&format!("{}.b", self.name))?;
        let y = s.tape.matmul(x, w)?;
        s.tape.add_row_broadcast(y, b)
    }
}

/// `n` stacked (linear, ReLU) blocks; `dims` holds `n + 1` sizes.
#[derive(Debug, Clone)]
pub struct MlpStack {
    pub layers: Vec<Linear>,
}

impl MlpStack {
    pub fn new(name: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.{i}"), w[0], w[1]))
            .collect();
        MlpStack { layers }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        for l in &self.layers {
            l.init(store, seed)?;
        }
        Ok(())
    }

    /// Linear + ReLU per block.
    pub fn forward_relu<T: Scalar>(&self, s: &Session<T>, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = s.tape.relu(l.forward(s, x)?);
        }
        Ok(x)
    }
}

/// Multi-head self-attention over rows of `x: (n, dim)`.
///
/// Q, K, V are learned projections of the shared input; each head runs
/// `softmax(Q Kt / sqrt(dim/heads)) V` on its column slice, heads are
/// concatenated and output-projected.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!(
                "attention dim {dim} must divide evenly into {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            name: name.into(),
            dim,
            heads,
        })
    }

    fn proj(&self, which: &str) -> Linear {
        Linear::new(format!("{}.{which}", self.name), self.dim, self.dim)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        for which in ["q", "k", "v", "o"] {
            self.proj(which).init(store, seed)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let head_dim = self.dim / self.heads;
        let q = self.proj("q").forward(s, x)?;
        let k = self.proj("k").forward(s, x)?;
        let v = self.proj("v").forward(s, x)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = s.tape.slice(q, 1, h * head_dim, head_dim)?;
            let kh = s.tape.slice(k, 1, h * head_dim, head_dim)?;
            let vh = s.tape.slice(v, 1, h * head_dim, head_dim)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.scale(s.tape.matmul(qh, kt)?, scale);
            let weights = s.tape.softmax_last_axis(scores);
            heads.push(s.tape.matmul(weights, vh)?);
        }
        let concat = s.tape.concat(1, &heads)?;
        self.proj("o").forward(s, concat)
    }
}

/// Convolution layer with bias, input `(batch, c_in, len)`.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1dLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Conv1dLayer {
            name: name.into(),
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        store.init_uniform(
            format!("{}.w", self.name),
            vec![self.c_out, self.c_in, self.kernel],
            self.c_in * self.kernel,
            seed,
        )?;
        store.init_zeros(format!("{}.b", self.name), vec![self.c_out])
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.w", self.name))?;
        let b = s.param(&format!("{}.b", self.name))?;
        let y = s.tape.conv1d(x, w)?;
        s.tape.add_channel_bias(y, b, 1)
    }
}

/// Convolution layer with bias, input `(c_in, h, w)`.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// Zero-initialized weights (used where the untrained network must
    /// start as the identity over a skip path).
    pub zero_init: bool,
}

impl Conv2dLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Conv2dLayer {
            name: name.into(),
            c_in,
            c_out,
            kernel,
            zero_init: false,
        }
    }

    pub fn zero_init(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let shape = vec![self.c_out, self.c_in, self.kernel, self.kernel];
        if self.zero_init {
            store.init_zeros(format!("{}.w", self.name), shape)?;
        } else {
            store.init_uniform(
                format!("{}.w", self.name),
                shape,
                self.c_in * self.kernel * self.kernel,
                seed,
            )?;
        }
        store.init_zeros(format!("{}.b", self.name), vec![self.c_out])
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.w", self.name))?;
        let b = s.param(&format!("{}.b", self.name))?;
        let y = s.tape.conv2d(x, w)?;
        s.tape.add_channel_bias(y, b, 0)
    }
}

/// `x + conv(relu(conv(x)))` on a single-channel field `(1, h, w)`.
/// The second convolution is zero-initialized so a fresh block is the
/// identity.
#[derive(Debug, Clone)]
pub struct ResidualBlock2d {
    pub expand: Conv2dLayer,
    pub reduce: Conv2dLayer,
}

impl ResidualBlock2d {
    pub fn new(name: &str, channels: usize) -> Self {
        ResidualBlock2d {
            expand: Conv2dLayer::new(format!("{name}.c1"), 1, channels, 3),
            reduce: Conv2dLayer::new(format!("{name}.c2"), channels, 1, 3).zero_init(),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.expand.init(store, seed)?;
        self.reduce.init(store, seed)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = s.tape.relu(self.expand.forward(s, x)?);
        let r = self.reduce.forward(s, h)?;
        s.tape.add(x, r)
    }
}

/// A stack of residual refinement blocks.
#[derive(Debug, Clone)]
pub struct ResidualStack2d {
    pub blocks: Vec<ResidualBlock2d>,
}

impl ResidualStack2d {
    pub fn new(name: &str, count: usize, channels: usize) -> Self {
        ResidualStack2d {
            blocks: (0..count)
                .map(|i| ResidualBlock2d::new(&format!("{name}.{i}"), channels))
                .collect(),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        for b in &self.blocks {
            b.init(store, seed)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(s, x)?;
        }
        Ok(x)
    }
}

/// Small encoder-decoder with skip concatenations, 2x down/up-sampling
/// and a global residual path: `out = x + conv_out(decoder(...))` with a
/// zero-initialized output convolution, so a fresh net is the identity.
#[derive(Debug, Clone)]
pub struct UNet {
    pub name: String,
    pub depth: usize,
    pub base_channels: usize,
    enc: Vec<(Conv2dLayer, Conv2dLayer)>,
    bottleneck: (Conv2dLayer, Conv2dLayer),
    dec: Vec<(Conv2dLayer, Conv2dLayer)>,
    out: Conv2dLayer,
}

impl UNet {
    pub fn new(name: impl Into<String>, depth: usize, base_channels: usize) -> Result<Self> {
        if depth == 0 || base_channels == 0 {
            return Err(Error::config("unet needs depth >= 1 and channels >= 1"));
        }
        let name = name.into();
        let c = |level: usize| base_channels << level;
        let mut enc = Vec::new();
        for lv in 0..depth {
            let c_in = if lv == 0 { 1 } else { c(lv - 1) };
            enc.push((
                Conv2dLayer::new(format!("{name}.enc{lv}.a"), c_in, c(lv), 3),
                Conv2dLayer::new(format!("{name}.enc{lv}.b"), c(lv), c(lv), 3),
            ));
        }
        let bottleneck = (
            Conv2dLayer::new(format!("{name}.mid.a"), c(depth - 1), c(depth), 3),
            Conv2dLayer::new(format!("{name}.mid.b"), c(depth), c(depth), 3),
        );
        let mut dec = Vec::new();
        for lv in (0..depth).rev() {
            // upsampled (2^(lv+1) channels) concatenated with the skip
            dec.push((
                Conv2dLayer::new(format!("{name}.dec{lv}.a"), c(lv + 1) + c(lv), c(lv), 3),
                Conv2dLayer::new(format!("{name}.dec{lv}.b"), c(lv), c(lv), 3),
            ));
        }
        let out = Conv2dLayer::new(format!("{name}.out"), base_channels, 1, 3).zero_init();
        Ok(UNet {
            name,
            depth,
            base_channels,
            enc,
            bottleneck,
            dec,
            out,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        for (a, b) in self.enc.iter().chain([&self.bottleneck]).chain(self.dec.iter()) {
            a.init(store, seed)?;
            b.init(store, seed)?;
        }
        self.out.init(store, seed)
    }

    /// `x: (1, h, w)` with `h`, `w` divisible by `2^depth`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x);
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::shape(format!("unet wants (1,h,w), got {shape:?}")));
        }
        let div = 1usize << self.depth;
        if shape[1] % div != 0 || shape[2] % div != 0 || shape[1] < 2 * div || shape[2] < 2 * div {
            return Err(Error::config(format!(
                "unet depth {} needs spatial dims divisible by {div} and >= {}, got {}x{}",
                self.depth,
                2 * div,
                shape[1],
                shape[2]
            )));
        }
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x;
        for (a, b) in &self.enc {
            h = s.tape.relu(a.forward(s, h)?);
            h = s.tape.relu(b.forward(s, h)?);
            skips.push(h);
            h = s.tape.avg_pool2(h)?;
        }
        h = s.tape.relu(self.bottleneck.0.forward(s, h)?);
        h = s.tape.relu(self.bottleneck.1.forward(s, h)?);
        for (i, (a, b)) in self.dec.iter().enumerate() {
            let up = s.tape.upsample2(h)?;
            let skip = skips[self.depth - 1 - i];
            let cat = s.tape.concat(0, &[up, skip])?;
            h = s.tape.relu(a.forward(s, cat)?);
            h = s.tape.relu(b.forward(s, h)?);
        }
        let r = self.out.forward(s, h)?;
        s.tape.add(x, r)
    }
}
