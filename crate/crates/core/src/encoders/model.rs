use rand::Rng;

use super::config::{EncoderConfig, LayerSpec};
use super::layers::{self, Shape, Window};
use super::params::{ParamSet, Tensor};
use super::{EmbeddingVec, Modality, Real, UnpooledEmbedding};
use crate::frontends::{ImageTensor, Mode, Spectrogram};
use crate::{seed, Error, Result};

/// Parameters of all three encoders together with the architecture they
/// instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cout: usize,
    win: Window,
    relu: bool,
}

#[derive(Clone, Copy)]
enum Op {
    Conv(ConvGeom),
    Pool(Window),
}

enum LayerCache<T> {
    Conv { col: Vec<T>, input: Shape, out: Shape, post: Option<Vec<T>> },
    Pool { arg: Vec<u32>, input: Shape },
}

struct ItemCache<T> {
    layers: Vec<LayerCache<T>>,
}

struct BnCache<T> {
    /// Normalized input per item, `n_mels × frames`.
    xhat: Vec<Vec<T>>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    count: usize,
}

/// Result of a batched forward pass, with whatever the backward pass needs.
pub struct Forward<T> {
    pub modality: Modality,
    /// Pooled embedding per item, length d.
    pub pooled: Vec<Vec<T>>,
    /// Pre-pooling output per item, `d × steps` (channel-major).
    pub unpooled: Vec<Vec<T>>,
    pub steps: usize,
    items: Vec<ItemCache<T>>,
    bn: Option<BnCache<T>>,
    mode: Mode,
}

impl<T> Forward<T> {
    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }
}

fn name(m: Modality, part: &str) -> String {
    format!("{}.{part}", m.prefix())
}

fn ops(trunk: &[LayerSpec]) -> Vec<Op> {
    trunk
        .iter()
        .map(|l| match l {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                relu,
            } => Op::Conv(ConvGeom {
                cout: *out_channels,
                win: Window {
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                },
                relu: *relu,
            }),
            LayerSpec::MaxPool { window, padding, .. } => Op::Pool(Window {
                kernel: *window,
                stride: l.stride(),
                padding: *padding,
            }),
        })
        .collect()
}

impl<T: Real> Model<T> {
    /// Layer program for an encoder: trunk layers then the linear projection
    /// to d channels. Parameter slots are named `trunk{i}` and `proj`.
    fn program(&self, m: Modality) -> Vec<(String, Op)> {
        program(&self.config, m)
    }

    /// Seeded fan-in–scaled uniform initialization: bound √(6/fan_in) before
    /// a ReLU and √(3/fan_in) otherwise, zero biases, unit batch-norm scale.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in expected_shapes(config) {
            let t = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let relu = relu_for(config, &name);
                let bound = ((if relu { 6.0 } else { 3.0 }) / fan_in as f64).sqrt();
                let mut rng = seed::rng(seed, &format!("init.{name}"), &[]);
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect();
                Tensor { shape, data }
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::filled(&shape, T::one())
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        Ok(Model {
            config: config.clone(),
            params,
        })
    }

    /// Wrap existing arrays, checking every name and shape against `config`.
    pub fn from_params(config: &EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(config);
        let mut sorted: Vec<_> = expected.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, shape) in sorted {
            match params.get(name) {
                None => {
                    return Err(Error::CheckpointShape {
                        name: name.clone(),
                        message: "missing".into(),
                    })
                }
                Some(t) if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() => {
                    return Err(Error::CheckpointShape {
                        name: name.clone(),
                        message: format!("shape {:?} does not match configured {:?}", t.shape, shape),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = params.names().find(|n| !expected.iter().any(|(e, _)| e == *n)) {
            return Err(Error::CheckpointShape {
                name: extra.clone(),
                message: "not part of the configured model".into(),
            });
        }
        Ok(Model {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Batched audio forward pass. In train mode the front batch norm uses
    /// statistics of this batch; in eval mode its running statistics.
    pub fn forward_audio(&self, m: Modality, batch: &[&Spectrogram], mode: Mode, record: bool) -> Result<Forward<T>> {
        assert!(m.is_audio(), "forward_audio on {m:?}");
        let n_mels = self.config.n_mels;
        let frames = batch.first().map_or(0, |s| s.frames);
        for s in batch {
            if s.n_mels != n_mels || s.frames != frames || s.values.len() != n_mels * frames {
                return Err(Error::Shape(format!(
                    "spectrogram {}x{} does not match {}x{} expected for this batch",
                    s.frames, s.n_mels, frames, n_mels
                )));
            }
        }
        self.config.audio_trunk_shape(frames)?;
        // frequency-major [1, n_mels, frames]
        let mut inputs: Vec<Vec<T>> = batch
            .iter()
            .map(|s| {
                let mut x = vec![T::zero(); n_mels * frames];
                for t in 0..frames {
                    for k in 0..n_mels {
                        x[k * frames + t] = T::of(s.values[t * n_mels + k] as f64);
                    }
                }
                x
            })
            .collect();
        let bn = if self.config.front_batchnorm {
            Some(self.front_batchnorm(m, &mut inputs, frames, mode))
        } else {
            None
        };
        let shape = Shape { c: 1, h: n_mels, w: frames };
        let mut fwd = self.run_trunk(m, inputs, shape, mode, record)?;
        fwd.bn = bn.filter(|_| record || mode == Mode::Train);
        Ok(fwd)
    }

    /// Normalizes `inputs` in place and returns what backward needs.
    fn front_batchnorm(&self, m: Modality, inputs: &mut [Vec<T>], frames: usize, mode: Mode) -> BnCache<T> {
        let n_mels = self.config.n_mels;
        let eps = T::of(self.config.bn_eps);
        let count = inputs.len() * frames;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; n_mels];
                let mut sq = vec![0.0f64; n_mels];
                for x in inputs.iter() {
                    for k in 0..n_mels {
                        for &v in &x[k * frames..(k + 1) * frames] {
                            mean[k] += v.f64();
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= count as f64);
                for x in inputs.iter() {
                    for k in 0..n_mels {
                        for &v in &x[k * frames..(k + 1) * frames] {
                            let d = v.f64() - mean[k];
                            sq[k] += d * d;
                        }
                    }
                }
                let var: Vec<T> = sq.iter().map(|s| T::of(s / count as f64)).collect();
                (mean.into_iter().map(T::of).collect::<Vec<T>>(), var)
            }
            Mode::Eval => (
                self.params.data(&name(m, "bn.running_mean")).to_vec(),
                self.params.data(&name(m, "bn.running_var")).to_vec(),
            ),
        };
        let gamma = self.params.data(&name(m, "bn.gamma"));
        let beta = self.params.data(&name(m, "bn.beta"));
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat_all = Vec::with_capacity(inputs.len());
        for x in inputs.iter_mut() {
            let mut xhat = vec![T::zero(); x.len()];
            for k in 0..n_mels {
                for t in 0..frames {
                    let i = k * frames + t;
                    let h = (x[i] - mean[k]) * inv[k];
                    xhat[i] = h;
                    x[i] = gamma[k] * h + beta[k];
                }
            }
            xhat_all.push(xhat);
        }
        BnCache {
            xhat: xhat_all,
            batch_mean: mean,
            batch_var: var,
            count,
        }
    }

    pub fn forward_image(&self, batch: &[&ImageTensor], record: bool) -> Result<Forward<T>> {
        let size = batch.first().map_or(0, |t| t.size);
        for t in batch {
            if t.size != size || t.values.len() != size * size * 3 {
                return Err(Error::Shape(format!("image tensor of size {} in a batch of size {size}", t.size)));
            }
        }
        self.config.image_trunk_shape(size)?;
        let inputs = batch
            .iter()
            .map(|t| {
                let mut x = vec![T::zero(); 3 * size * size];
                for p in 0..size * size {
                    for c in 0..3 {
                        x[c * size * size + p] = T::of(t.values[p * 3 + c] as f64);
                    }
                }
                x
            })
            .collect();
        let shape = Shape { c: 3, h: size, w: size };
        self.run_trunk(Modality::Image, inputs, shape, Mode::Eval, record)
    }

    fn run_trunk(&self, m: Modality, inputs: Vec<Vec<T>>, shape: Shape, mode: Mode, record: bool) -> Result<Forward<T>> {
        let program = self.program(m);
        let d = self.config.embed_dim;
        let mut pooled = Vec::with_capacity(inputs.len());
        let mut unpooled = Vec::with_capacity(inputs.len());
        let mut items = Vec::new();
        let mut steps = 0;
        for mut x in inputs {
            let mut s = shape;
            let mut caches = Vec::with_capacity(program.len());
            for (slot, op) in &program {
                match op {
                    Op::Conv(g) => {
                        let o = g.win.out(s, g.cout);
                        let col = layers::im2col(&x, s, &g.win, o);
                        let k = s.c * g.win.kernel[0] * g.win.kernel[1];
                        let mut y = layers::conv_forward(
                            &col,
                            self.params.data(&format!("{}.{slot}.weight", m.prefix())),
                            self.params.data(&format!("{}.{slot}.bias", m.prefix())),
                            g.cout,
                            k,
                            o.h * o.w,
                        );
                        if g.relu {
                            layers::relu_inplace(&mut y);
                        }
                        if record {
                            caches.push(LayerCache::Conv {
                                col,
                                input: s,
                                out: o,
                                post: g.relu.then(|| y.clone()),
                            });
                        }
                        x = y;
                        s = o;
                    }
                    Op::Pool(w) => {
                        let (y, arg, o) = layers::maxpool_forward(&x, s, w);
                        if record {
                            caches.push(LayerCache::Pool { arg, input: s });
                        }
                        x = y;
                        s = o;
                    }
                }
            }
            debug_assert_eq!(s.c, d);
            steps = s.h * s.w;
            let scale = T::one() / T::of(steps as f64);
            let p: Vec<T> = x.chunks_exact(steps).map(|row| row.iter().copied().sum::<T>() * scale).collect();
            pooled.push(p);
            unpooled.push(x);
            if record {
                items.push(ItemCache { layers: caches });
            }
        }
        Ok(Forward {
            modality: m,
            pooled,
            unpooled,
            steps,
            items,
            bn: None,
            mode,
        })
    }

    /// Accumulate parameter gradients for `d_pooled` (one length-d vector per
    /// item) into `grads`. The forward pass must have been recorded.
    pub fn backward(&self, fwd: &Forward<T>, d_pooled: &[Vec<T>], grads: &mut ParamSet<T>) {
        assert_eq!(fwd.items.len(), d_pooled.len(), "forward pass was not recorded for every item");
        let m = fwd.modality;
        let program = self.program(m);
        let need_input_grad = m.is_audio() && fwd.bn.is_some();
        let scale = T::one() / T::of(fwd.steps as f64);
        let frames_grad: Vec<Option<Vec<T>>> = fwd
            .items
            .iter()
            .zip(d_pooled)
            .map(|(item, dp)| {
                let mut g: Vec<T> = dp
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v * scale, fwd.steps))
                    .collect();
                for (li, ((slot, op), cache)) in program.iter().zip(&item.layers).enumerate().rev() {
                    let first = li == 0;
                    match (op, cache) {
                        (Op::Conv(geom), LayerCache::Conv { col, input, out, post }) => {
                            if let Some(post) = post {
                                layers::relu_backward_inplace(&mut g, post);
                            }
                            let wname = format!("{}.{slot}.weight", m.prefix());
                            let bname = format!("{}.{slot}.bias", m.prefix());
                            let k = input.c * geom.win.kernel[0] * geom.win.kernel[1];
                            let n = out.h * out.w;
                            let mut db = std::mem::take(&mut grads.get_mut(&bname).expect("bias grad").data);
                            let dcol = layers::conv_backward(
                                &g,
                                col,
                                self.params.data(&wname),
                                geom.cout,
                                k,
                                n,
                                grads.data_mut(&wname),
                                &mut db,
                                !first || need_input_grad,
                            );
                            grads.get_mut(&bname).expect("bias grad").data = db;
                            match dcol {
                                Some(dcol) => g = layers::col2im(&dcol, *input, &geom.win, *out),
                                None => return None,
                            }
                        }
                        (Op::Pool(_), LayerCache::Pool { arg, input }) => {
                            g = layers::maxpool_backward(&g, arg, *input);
                        }
                        _ => unreachable!("cache does not match program"),
                    }
                }
                Some(g)
            })
            .collect();
        if let Some(bn) = &fwd.bn {
            let n_mels = self.config.n_mels;
            let mut dgamma = vec![T::zero(); n_mels];
            let mut dbeta = vec![T::zero(); n_mels];
            for (g, xhat) in frames_grad.iter().zip(&bn.xhat) {
                let g = g.as_ref().expect("input gradient");
                let frames = g.len() / n_mels;
                for k in 0..n_mels {
                    for t in 0..frames {
                        let i = k * frames + t;
                        dgamma[k] += g[i] * xhat[i];
                        dbeta[k] += g[i];
                    }
                }
            }
            for (a, b) in grads.data_mut(&name(m, "bn.gamma")).iter_mut().zip(dgamma) {
                *a += b;
            }
            for (a, b) in grads.data_mut(&name(m, "bn.beta")).iter_mut().zip(dbeta) {
                *a += b;
            }
        }
    }

    /// Fold a train-mode batch's statistics into the running mean/variance
    /// (variance stored unbiased).
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        let Some(bn) = fwd.bn.as_ref().filter(|_| fwd.mode == Mode::Train) else {
            return;
        };
        let mom = T::of(self.config.bn_momentum);
        let m = fwd.modality;
        let unbias = if bn.count > 1 {
            T::of(bn.count as f64 / (bn.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in self.params.data_mut(&name(m, "bn.running_mean")).iter_mut().zip(&bn.batch_mean) {
            *r = (T::one() - mom) * *r + mom * b;
        }
        for (r, &b) in self.params.data_mut(&name(m, "bn.running_var")).iter_mut().zip(&bn.batch_var) {
            *r = (T::one() - mom) * *r + mom * b * unbias;
        }
    }

    /// Values produced by the front batch norm for this batch, frequency-major
    /// per item. Exposed for verification.
    pub fn front_batchnorm_output(&self, m: Modality, batch: &[&Spectrogram], mode: Mode) -> Vec<Vec<T>> {
        let n_mels = self.config.n_mels;
        let frames = batch.first().map_or(0, |s| s.frames);
        let mut inputs: Vec<Vec<T>> = batch
            .iter()
            .map(|s| {
                let mut x = vec![T::zero(); n_mels * frames];
                for t in 0..frames {
                    for k in 0..n_mels {
                        x[k * frames + t] = T::of(s.values[t * n_mels + k] as f64);
                    }
                }
                x
            })
            .collect();
        self.front_batchnorm(m, &mut inputs, frames, mode);
        inputs
    }
}

impl Model<f32> {
    /// Embed a batch of spectrograms with one of the audio encoders.
    pub fn encode_audio(
        &self,
        m: Modality,
        batch: &[&Spectrogram],
        mode: Mode,
    ) -> Result<Vec<(EmbeddingVec, UnpooledEmbedding)>> {
        if !m.is_audio() {
            return Err(Error::Shape(format!("{m:?} is not an audio modality")));
        }
        let fwd = self.forward_audio(m, batch, mode, false)?;
        Ok(export(&fwd, self.config.embed_dim))
    }

    pub fn encode_image(&self, batch: &[&ImageTensor]) -> Result<Vec<(EmbeddingVec, UnpooledEmbedding)>> {
        let fwd = self.forward_image(batch, false)?;
        Ok(export(&fwd, self.config.embed_dim))
    }
}

fn export(fwd: &Forward<f32>, d: usize) -> Vec<(EmbeddingVec, UnpooledEmbedding)> {
    fwd.pooled
        .iter()
        .zip(&fwd.unpooled)
        .map(|(p, u)| {
            let mut values = vec![0.0f32; fwd.steps * d];
            for c in 0..d {
                for s in 0..fwd.steps {
                    values[s * d + c] = u[c * fwd.steps + s];
                }
            }
            (
                EmbeddingVec {
                    values: p.clone(),
                    modality: fwd.modality,
                },
                UnpooledEmbedding {
                    values,
                    steps: fwd.steps,
                    dim: d,
                },
            )
        })
        .collect()
}

fn program(config: &EncoderConfig, m: Modality) -> Vec<(String, Op)> {
    let (trunk, proj) = if m.is_audio() {
        (&config.audio_trunk, ([1, 1], [0, 0]))
    } else {
        (&config.image_trunk, ([3, 3], [1, 1]))
    };
    let mut out: Vec<(String, Op)> = ops(trunk)
        .into_iter()
        .enumerate()
        .map(|(i, op)| (format!("trunk{i}"), op))
        .collect();
    out.push((
        "proj".into(),
        Op::Conv(ConvGeom {
            cout: config.embed_dim,
            win: Window {
                kernel: proj.0,
                stride: [1, 1],
                padding: proj.1,
            },
            relu: false,
        }),
    ));
    out
}

fn relu_for(config: &EncoderConfig, param: &str) -> bool {
    Modality::ALL.iter().any(|&m| {
        program(config, m).iter().any(|(slot, op)| {
            matches!(op, Op::Conv(g) if g.relu) && param == format!("{}.{slot}.weight", m.prefix())
        })
    })
}

/// Every named array the configured model owns, with its shape.
pub fn expected_shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for m in Modality::ALL {
        let mut cin = if m.is_audio() { 1 } else { 3 };
        if m.is_audio() && config.front_batchnorm {
            for part in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((name(m, &format!("bn.{part}")), vec![config.n_mels]));
            }
        }
        for (slot, op) in program(config, m) {
            if let Op::Conv(g) = op {
                out.push((
                    format!("{}.{slot}.weight", m.prefix()),
                    vec![g.cout, cin, g.win.kernel[0], g.win.kernel[1]],
                ));
                out.push((format!("{}.{slot}.bias", m.prefix()), vec![g.cout]));
                cin = g.cout;
            }
        }
    }
    out
}
