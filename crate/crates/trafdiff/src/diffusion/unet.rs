//! U-shaped denoiser: 5 resolution levels, residual blocks with time and
//! class conditioning, stride-2 downsampling, nearest-neighbor upsampling
//! with channel-concat skips. The same wiring serves images [N,1,H,W] and
//! traces [N,1,L]; only the convolution kind differs.

use ndarray::{Array2, ArrayD, Axis, Slice};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    sinusoid_embedding, Conv1d, Conv2d, El, Embedding, GroupNorm, Layer, Linear, Param, SiLU,
    Upsample1d, Upsample2d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    OneD,
    TwoD,
}

/// Architecture description, enough to rebuild the network shape exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub kind: SpatialKind,
    pub in_ch: usize,
    pub base_channels: usize,
    /// Per-level width multipliers, shallowest first; always 5 levels.
    pub channel_mults: Vec<usize>,
    /// Some(k): class-conditional on k labels via embedding.
    pub num_classes: Option<usize>,
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channel_mults.len() != LEVELS {
            return Err(Error::Config(format!(
                "denoiser needs {LEVELS} channel multipliers, got {}",
                self.channel_mults.len()
            )));
        }
        if self.in_ch == 0 || self.base_channels == 0 || self.channel_mults.contains(&0)
        {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        if self.num_classes == Some(0) {
            return Err(Error::Config("conditional model needs >= 1 class".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        self.channel_mults.iter().map(|m| m * self.base_channels).collect()
    }

    fn temb_dim(&self) -> usize {
        4 * self.base_channels.max(2)
    }

    fn sin_dim(&self) -> usize {
        let b = self.base_channels.max(2);
        if b.is_multiple_of(2) {
            b
        } else {
            b + 1
        }
    }
}

pub const LEVELS: usize = 5;

fn conv_same<E: El>(kind: SpatialKind, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Box<dyn Layer<E>> {
    match kind {
        SpatialKind::TwoD => Box::new(Conv2d::same(cin, cout, rng)),
        SpatialKind::OneD => Box::new(Conv1d::same(cin, cout, rng)),
    }
}

fn conv_halving<E: El>(kind: SpatialKind, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Box<dyn Layer<E>> {
    match kind {
        SpatialKind::TwoD => Box::new(Conv2d::halving(cin, cout, rng)),
        SpatialKind::OneD => Box::new(Conv1d::halving(cin, cout, rng)),
    }
}

fn conv_proj<E: El>(kind: SpatialKind, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Box<dyn Layer<E>> {
    match kind {
        SpatialKind::TwoD => Box::new(Conv2d::proj(cin, cout, rng)),
        SpatialKind::OneD => Box::new(Conv1d::proj(cin, cout, rng)),
    }
}

fn upsample<E: El>(kind: SpatialKind) -> Box<dyn Layer<E>> {
    match kind {
        SpatialKind::TwoD => Box::new(Upsample2d::new()),
        SpatialKind::OneD => Box::new(Upsample1d::new()),
    }
}

/// Add a per-channel vector [N,C] onto [N,C,spatial...].
fn add_channel_vec<E: El>(h: &mut ArrayD<E>, v: &Array2<E>) {
    let n = h.shape()[0];
    let c = h.shape()[1];
    let s: usize = h.shape()[2..].iter().product::<usize>().max(1);
    let hs = h.as_slice_mut().expect("standard layout");
    for i in 0..n {
        for ci in 0..c {
            let add = v[[i, ci]];
            let lane = &mut hs[(i * c + ci) * s..(i * c + ci + 1) * s];
            for x in lane {
                *x += add;
            }
        }
    }
}

/// Sum [N,C,spatial...] over spatial: gradient of [`add_channel_vec`].
fn sum_spatial<E: El>(g: &ArrayD<E>) -> Array2<E> {
    let n = g.shape()[0];
    let c = g.shape()[1];
    let s: usize = g.shape()[2..].iter().product::<usize>().max(1);
    let gs = g.as_slice().expect("standard layout");
    let mut out = Array2::<E>::zeros((n, c));
    for i in 0..n {
        for ci in 0..c {
            let lane = &gs[(i * c + ci) * s..(i * c + ci + 1) * s];
            let mut acc = E::zero();
            for &x in lane {
                acc += x;
            }
            out[[i, ci]] = acc;
        }
    }
    out
}

/// Residual block: GN -> SiLU -> conv -> (+ time proj) -> GN -> SiLU ->
/// conv, plus a 1x1-projected skip when the width changes.
struct ResBlock<E: El> {
    gn1: GroupNorm<E>,
    act1: SiLU<E>,
    conv1: Box<dyn Layer<E>>,
    temb_act: SiLU<E>,
    temb_proj: Linear<E>,
    gn2: GroupNorm<E>,
    act2: SiLU<E>,
    conv2: Box<dyn Layer<E>>,
    skip: Option<Box<dyn Layer<E>>>,
}

impl<E: El> ResBlock<E> {
    fn new(kind: SpatialKind, cin: usize, cout: usize, temb_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gn1: GroupNorm::auto(cin),
            act1: SiLU::new(),
            conv1: conv_same(kind, cin, cout, rng),
            temb_act: SiLU::new(),
            temb_proj: Linear::new(temb_dim, cout, rng),
            gn2: GroupNorm::auto(cout),
            act2: SiLU::new(),
            conv2: conv_same(kind, cout, cout, rng),
            skip: (cin != cout).then(|| conv_proj(kind, cin, cout, rng)),
        }
    }

    fn forward(&mut self, x: &ArrayD<E>, temb: &Array2<E>) -> ArrayD<E> {
        let mut h = self.conv1.forward(&self.act1.forward(&self.gn1.forward(x)));
        let tp_in = self.temb_act.forward(&temb.clone().into_dyn());
        let tp = self
            .temb_proj
            .forward(&tp_in)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("temb proj rank");
        add_channel_vec(&mut h, &tp);
        let h = self.conv2.forward(&self.act2.forward(&self.gn2.forward(&h)));
        let sk = match &mut self.skip {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        h + sk
    }

    /// Returns (grad wrt x, grad wrt temb).
    fn backward(&mut self, gy: &ArrayD<E>) -> (ArrayD<E>, Array2<E>) {
        let g = self.gn2.backward(&self.act2.backward(&self.conv2.backward(gy)));
        let g_tp = sum_spatial(&g);
        let g_temb_in = self.temb_proj.backward(&g_tp.into_dyn());
        let g_temb = self
            .temb_act
            .backward(&g_temb_in)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("temb grad rank");
        let gx_main = self.gn1.backward(&self.act1.backward(&self.conv1.backward(&g)));
        let gx_skip = match &mut self.skip {
            Some(p) => p.backward(gy),
            None => gy.clone(),
        };
        (gx_main + gx_skip, g_temb)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut ps = Vec::new();
        ps.extend(self.gn1.params_mut());
        ps.extend(self.conv1.params_mut());
        ps.extend(self.temb_proj.params_mut());
        ps.extend(self.gn2.params_mut());
        ps.extend(self.conv2.params_mut());
        if let Some(s) = &mut self.skip {
            ps.extend(s.params_mut());
        }
        ps
    }
}

struct UpStage<E: El> {
    up: Box<dyn Layer<E>>,
    conv: Box<dyn Layer<E>>,
}

impl<E: El> UpStage<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        self.conv.forward(&self.up.forward(x))
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        self.up.backward(&self.conv.backward(gy))
    }
}

/// The denoiser network. Predicts the noise component of its input at the
/// given timestep; output shape equals input shape.
pub struct UNet<E: El> {
    pub spec: DenoiserSpec,
    stem: Box<dyn Layer<E>>,
    enc: Vec<ResBlock<E>>,
    downs: Vec<Box<dyn Layer<E>>>,
    mid: ResBlock<E>,
    ups: Vec<UpStage<E>>,
    dec: Vec<ResBlock<E>>,
    head_gn: GroupNorm<E>,
    head_act: SiLU<E>,
    head_conv: Box<dyn Layer<E>>,
    time_l1: Linear<E>,
    time_act: SiLU<E>,
    time_l2: Linear<E>,
    label_emb: Option<Embedding<E>>,
    /// Channel splits recorded by forward for the concat backward.
    split_widths: Vec<usize>,
}

impl<E: El> UNet<E> {
    pub fn new(spec: DenoiserSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let kind = spec.kind;
        let c = spec.widths();
        let td = spec.temb_dim();
        let stem = conv_same(kind, spec.in_ch, c[0], rng);
        let mut enc = Vec::with_capacity(LEVELS);
        for &ci in c.iter().take(LEVELS) {
            enc.push(ResBlock::new(kind, ci, ci, td, rng));
        }
        let mut downs = Vec::with_capacity(LEVELS - 1);
        for i in 0..LEVELS - 1 {
            downs.push(conv_halving(kind, c[i], c[i + 1], rng));
        }
        let mid = ResBlock::new(kind, c[LEVELS - 1], c[LEVELS - 1], td, rng);
        let mut ups = Vec::with_capacity(LEVELS - 1);
        for i in 0..LEVELS - 1 {
            // ups[i] lifts from level i+1 down to level i.
            ups.push(UpStage { up: upsample(kind), conv: conv_same(kind, c[i + 1], c[i], rng) });
        }
        let mut dec = Vec::with_capacity(LEVELS);
        for &ci in c.iter().take(LEVELS) {
            dec.push(ResBlock::new(kind, 2 * ci, ci, td, rng));
        }
        let head_gn = GroupNorm::auto(c[0]);
        let head_conv = conv_same(kind, c[0], spec.in_ch, rng);
        let time_l1 = Linear::new(spec.sin_dim(), td, rng);
        let time_l2 = Linear::new(td, td, rng);
        let label_emb = spec.num_classes.map(|k| Embedding::new(k, td, rng));
        Ok(Self {
            spec,
            stem,
            enc,
            downs,
            mid,
            ups,
            dec,
            head_gn,
            head_act: SiLU::new(),
            head_conv,
            time_l1,
            time_act: SiLU::new(),
            time_l2,
            label_emb,
            split_widths: Vec::new(),
        })
    }

    /// Validate input shape: [N, in_ch, spatial...] with every spatial dim
    /// divisible by 2^(LEVELS-1).
    fn check_input(&self, x: &ArrayD<E>, n_labels: Option<usize>) -> Result<()> {
        let want_rank = match self.spec.kind {
            SpatialKind::TwoD => 4,
            SpatialKind::OneD => 3,
        };
        if x.ndim() != want_rank {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects rank {want_rank}, got {}",
                x.ndim()
            )));
        }
        if x.shape()[1] != self.spec.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects {} channel(s), got {}",
                self.spec.in_ch,
                x.shape()[1]
            )));
        }
        let div = 1 << (LEVELS - 1);
        for &d in &x.shape()[2..] {
            if d == 0 || d % div != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "spatial dim {d} must be a positive multiple of {div}"
                )));
            }
        }
        if self.label_emb.is_some() && n_labels != Some(x.shape()[0]) {
            return Err(Error::ShapeMismatch(
                "conditional denoiser needs one label per sample".into(),
            ));
        }
        Ok(())
    }

    /// Predict noise for inputs at timesteps `ts` (raw step values).
    /// `labels` are indices into the model's class set; required iff the
    /// network is conditional.
    pub fn forward(&mut self, x: &ArrayD<E>, ts: &[f64], labels: Option<&[usize]>) -> Result<ArrayD<E>> {
        self.check_input(x, labels.map(|l| l.len()))?;
        if ts.len() != x.shape()[0] {
            return Err(Error::ShapeMismatch("one timestep per sample".into()));
        }
        let sin = sinusoid_embedding::<E>(ts, self.spec.sin_dim());
        let t1 = self.time_l1.forward(&sin.into_dyn());
        let t2 = self.time_act.forward(&t1);
        let mut temb = self
            .time_l2
            .forward(&t2)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("temb rank");
        if let Some(emb) = &mut self.label_emb {
            let labels = labels.expect("checked above");
            temb = temb + emb.forward(labels);
        }

        let c = self.spec.widths();
        self.split_widths = c.clone();

        let mut skips: Vec<ArrayD<E>> = Vec::with_capacity(LEVELS);
        let mut h = self.stem.forward(x);
        for i in 0..LEVELS {
            let s = self.enc[i].forward(&h, &temb);
            if i < LEVELS - 1 {
                h = self.downs[i].forward(&s);
            }
            skips.push(s);
        }
        let mut d = self.mid.forward(&skips[LEVELS - 1], &temb);
        for i in (0..LEVELS).rev() {
            let cat = ndarray::concatenate(Axis(1), &[d.view(), skips[i].view()])
                .expect("concat")
                .as_standard_layout()
                .to_owned();
            d = self.dec[i].forward(&cat, &temb);
            if i > 0 {
                d = self.ups[i - 1].forward(&d);
            }
        }
        let y = self.head_conv.forward(&self.head_act.forward(&self.head_gn.forward(&d)));
        Ok(y)
    }

    /// Propagate output gradients through the whole net, accumulating into
    /// parameter grads. Returns the gradient wrt the input.
    pub fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let c = self.split_widths.clone();
        assert!(!c.is_empty(), "backward before forward");
        let n = gy.shape()[0];
        let td = self.spec.temb_dim();
        let mut g_temb = Array2::<E>::zeros((n, td));

        let mut g = self.head_gn.backward(&self.head_act.backward(&self.head_conv.backward(gy)));
        // Decoder, bottom of the loop ran last in forward.
        let mut skip_grads: Vec<Option<ArrayD<E>>> = (0..LEVELS).map(|_| None).collect();
        for i in 0..LEVELS {
            if i > 0 {
                g = self.ups[i - 1].backward(&g);
            }
            let (g_cat, gt) = self.dec[i].backward(&g);
            g_temb = g_temb + gt;
            let g_d = g_cat.slice_axis(Axis(1), Slice::from(0..c[i])).to_owned();
            let g_skip = g_cat.slice_axis(Axis(1), Slice::from(c[i]..2 * c[i])).to_owned();
            skip_grads[i] = Some(g_skip.as_standard_layout().to_owned());
            g = g_d.as_standard_layout().to_owned();
        }
        let (g_mid, gt) = self.mid.backward(&g);
        g_temb = g_temb + gt;
        let mut g_s = g_mid + skip_grads[LEVELS - 1].take().expect("skip grad");
        for i in (0..LEVELS).rev() {
            if i < LEVELS - 1 {
                let g_down = self.downs[i].backward(&g_s);
                g_s = g_down + skip_grads[i].take().expect("skip grad");
            }
            let (g_enc, gt) = self.enc[i].backward(&g_s);
            g_temb = g_temb + gt;
            g_s = g_enc;
        }
        let gx = self.stem.backward(&g_s);

        if let Some(emb) = &mut self.label_emb {
            emb.backward(&g_temb);
        }
        let g = self.time_l2.backward(&g_temb.into_dyn());
        let g = self.time_act.backward(&g);
        let _ = self.time_l1.backward(&g);
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut ps = Vec::new();
        ps.extend(self.stem.params_mut());
        for b in &mut self.enc {
            ps.extend(b.params_mut());
        }
        for d in &mut self.downs {
            ps.extend(d.params_mut());
        }
        ps.extend(self.mid.params_mut());
        for u in &mut self.ups {
            ps.extend(u.up.params_mut());
            ps.extend(u.conv.params_mut());
        }
        for b in &mut self.dec {
            ps.extend(b.params_mut());
        }
        ps.extend(self.head_gn.params_mut());
        ps.extend(self.head_conv.params_mut());
        ps.extend(self.time_l1.params_mut());
        ps.extend(self.time_l2.params_mut());
        if let Some(e) = &mut self.label_emb {
            ps.extend(e.params_mut());
        }
        ps
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_all_params(&mut self) {
        for p in self.params_mut() {
            p.w.fill(E::zero());
        }
    }
}
