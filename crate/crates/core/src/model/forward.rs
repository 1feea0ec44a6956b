use alloc::format;
use alloc::vec::Vec;

use super::layout::ParamLayout;
use super::revin::revin_normalize;
use super::{BlockKind, ForecastConfig};
use crate::data::Window;
use crate::gradcore::{Gradients, Tape, Tensor, Var};
use crate::{Error, Result};

/// Rows evaluated per tape when only predictions are needed.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub enum MixerVars {
    Identity,
    TimeMlp { w1: Var, b1: Var, w2: Var, b2: Var },
    Attention(AttentionVars),
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub norm1: (Var, Var),
    pub mixer: MixerVars,
    pub norm2: (Var, Var),
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// Every parameter of the model bound to leaves of one tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub kernel: Var,
    pub bias: Var,
    pub pos: Var,
    pub blocks: Vec<BlockVars>,
    pub head_w: Var,
    pub head_b: Var,
    ordered: Vec<Var>,
}

impl ModelVars {
    /// Registers `flat` as trainable leaves, one per layout entry.
    pub fn bind(tape: &mut Tape, layout: &ParamLayout, cfg: &ForecastConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.total() {
            return Err(Error::Length { expected: layout.total(), actual: flat.len() });
        }
        let ordered: Vec<Var> = layout
            .specs()
            .iter()
            .map(|s| Ok(tape.param(Tensor::new(&s.shape, flat[s.range()].to_vec())?)))
            .collect::<Result<_>>()?;

        let mut it = ordered.iter().copied();
        let mut next = || it.next().ok_or_else(|| Error::Config("layout shorter than model".into()));
        let kernel = next()?;
        let bias = next()?;
        let pos = next()?;
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for kind in &cfg.blocks {
            let norm1 = (next()?, next()?);
            let mixer = match kind {
                BlockKind::Id => MixerVars::Identity,
                BlockKind::TimeMlp => MixerVars::TimeMlp { w1: next()?, b1: next()?, w2: next()?, b2: next()? },
                BlockKind::Attention => MixerVars::Attention(AttentionVars {
                    wq: next()?,
                    wk: next()?,
                    wv: next()?,
                    wo: next()?,
                    bo: next()?,
                }),
            };
            blocks.push(BlockVars {
                norm1,
                mixer,
                norm2: (next()?, next()?),
                mlp_w1: next()?,
                mlp_b1: next()?,
                mlp_w2: next()?,
                mlp_b2: next()?,
            });
        }
        let head_w = next()?;
        let head_b = next()?;
        Ok(ModelVars { kernel, bias, pos, blocks, head_w, head_b, ordered })
    }

    /// Gradient of every parameter, flattened in canonical order.
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in &self.ordered {
            out.extend_from_slice(grads.wrt(v));
        }
        out
    }
}

/// Patch embedding: `[R×L]` normalized series to `[R×N×D]` tokens.
pub fn tokenize(tape: &mut Tape, x_norm: Var, vars: &ModelVars, cfg: &ForecastConfig) -> Result<Var> {
    tape.conv1d(x_norm, vars.kernel, vars.bias, cfg.stride)
}

/// `x_d = x_p + W_pos`, broadcast over the leading rows.
pub fn add_positional(tape: &mut Tape, tokens: Var, pos: Var) -> Result<Var> {
    tape.add(tokens, pos)
}

/// Scaled dot-product attention for one head.
///
/// `q`, `k` are `[R×N×d_k]`, `v` is `[R×N×D]`. Returns the mixed values and
/// the `[R×N×N]` row-stochastic weights.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let dk = tape.value(q).last_dim();
    if tape.value(k).last_dim() != dk {
        return Err(Error::shape(
            "attention",
            format!("query width {dk} vs key width {}", tape.value(k).last_dim()),
        ));
    }
    let scores = tape.bmm(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / libm::sqrt(dk as f64))?;
    let weights = tape.softmax(scores)?;
    let out = tape.bmm(weights, v, false)?;
    Ok((out, weights))
}

fn multi_head(tape: &mut Tape, z: Var, a: &AttentionVars, cfg: &ForecastConfig) -> Result<Var> {
    let (d, dk) = (cfg.d_model, cfg.d_k);
    let q = tape.matmul(z, a.wq)?;
    let k = tape.matmul(z, a.wk)?;
    let v = tape.matmul(z, a.wv)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_last(q, h * dk, dk)?;
        let kh = tape.slice_last(k, h * dk, dk)?;
        let vh = tape.slice_last(v, h * d, d)?;
        heads.push(attention(tape, qh, kh, vh)?.0);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_last(&heads)? };
    let proj = tape.matmul(cat, a.wo)?;
    tape.add(proj, a.bo)
}

fn time_mlp(tape: &mut Tape, z: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    // Mix along the token axis: [R×N×D] -> [R×D×N] -> MLP over N -> back.
    let zt = tape.transpose_last2(z)?;
    let h = tape.matmul(zt, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, w2)?;
    let h = tape.add(h, b2)?;
    tape.transpose_last2(h)
}

/// MetaFormer residual block on `[R×N×D]` tokens:
/// `u = x + mixer(norm1(x))`, `out = u + mlp(norm2(u))`.
pub fn metaformer_block(tape: &mut Tape, x: Var, block: &BlockVars, cfg: &ForecastConfig) -> Result<Var> {
    let z = tape.layernorm(x, block.norm1.0, block.norm1.1)?;
    let mixed = match block.mixer {
        MixerVars::Identity => z,
        MixerVars::TimeMlp { w1, b1, w2, b2 } => time_mlp(tape, z, w1, b1, w2, b2)?,
        MixerVars::Attention(ref a) => multi_head(tape, z, a, cfg)?,
    };
    let u = tape.add(x, mixed)?;
    let z = tape.layernorm(u, block.norm2.0, block.norm2.1)?;
    let h = tape.matmul(z, block.mlp_w1)?;
    let h = tape.add(h, block.mlp_b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, block.mlp_w2)?;
    let h = tape.add(h, block.mlp_b2)?;
    tape.add(u, h)
}

/// Flattens `[R×N×D]` token-major and applies the affine head, giving `[R×T]`.
pub fn detokenize(tape: &mut Tape, hidden: Var, head_w: Var, head_b: Var) -> Result<Var> {
    let shape = tape.value(hidden).shape().to_vec();
    let rows = if shape.len() == 3 { shape[0] } else { 1 };
    let width = tape.value(hidden).len() / rows;
    let flat = tape.reshape(hidden, &[rows, width])?;
    let out = tape.matmul(flat, head_w)?;
    tape.add(out, head_b)
}

/// Squared error summed over the horizon, averaged over channels and windows.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    tape.mse_loss(pred, target)
}

/// A configuration together with its parameter layout.
#[derive(Debug, Clone)]
pub struct Forecaster {
    config: ForecastConfig,
    layout: ParamLayout,
}

impl Forecaster {
    pub fn new(config: ForecastConfig) -> Result<Self> {
        let layout = ParamLayout::for_config(&config)?;
        Ok(Forecaster { config, layout })
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn bind(&self, tape: &mut Tape, params: &[f64]) -> Result<ModelVars> {
        ModelVars::bind(tape, &self.layout, &self.config, params)
    }

    /// Forward pass over `rows` univariate series laid end to end in
    /// `inputs` (`rows × L`). Returns predictions `[rows×T]` in original units.
    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, inputs: &[f64], rows: usize) -> Result<Var> {
        let l = self.config.lookback;
        if inputs.len() != rows * l || rows == 0 {
            return Err(Error::Length { expected: rows * l, actual: inputs.len() });
        }
        let mut normed = Vec::with_capacity(inputs.len());
        let mut scale = Vec::with_capacity(rows);
        let mut shift = Vec::with_capacity(rows);
        for series in inputs.chunks_exact(l) {
            let (z, stats) = revin_normalize(series);
            normed.extend_from_slice(&z);
            scale.push(stats.std);
            shift.push(stats.mean);
        }
        let x = tape.constant(Tensor::new(&[rows, l], normed)?);
        let tokens = tokenize(tape, x, vars, &self.config)?;
        let mut h = add_positional(tape, tokens, vars.pos)?;
        for block in &vars.blocks {
            h = metaformer_block(tape, h, block, &self.config)?;
        }
        let pred = detokenize(tape, h, vars.head_w, vars.head_b)?;
        tape.row_affine(pred, &scale, &shift)
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        let (m, l, t) = (self.config.channels, self.config.lookback, self.config.horizon);
        if w.input.len() != m * l {
            return Err(Error::Length { expected: m * l, actual: w.input.len() });
        }
        if w.target.len() != m * t {
            return Err(Error::Length { expected: m * t, actual: w.target.len() });
        }
        Ok(())
    }

    /// Forecast for one `M×L` input, returned as `M×T`.
    pub fn forecast(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params)?;
        let rows = self.config.channels;
        let out = self.forward(&mut tape, &vars, input, rows)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Predictions for every window, concatenated (`M×T` each).
    pub fn predict(&self, params: &[f64], windows: &[Window]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len() * self.config.channels * self.config.horizon);
        let per_chunk = (EVAL_CHUNK / self.config.channels).max(1);
        for chunk in windows.chunks(per_chunk) {
            let mut inputs = Vec::with_capacity(chunk.len() * self.config.channels * self.config.lookback);
            for w in chunk {
                self.check_window(w)?;
                inputs.extend_from_slice(&w.input);
            }
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, params)?;
            let pred = self.forward(&mut tape, &vars, &inputs, chunk.len() * self.config.channels)?;
            out.extend_from_slice(tape.value(pred).data());
        }
        Ok(out)
    }

    /// Mean loss over `windows` without building gradients.
    pub fn loss(&self, params: &[f64], windows: &[Window]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Empty("windows"));
        }
        let pred = self.predict(params, windows)?;
        let targets = windows.iter().flat_map(|w| w.target.iter());
        let sse: f64 = pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(sse / (windows.len() * self.config.channels) as f64)
    }

    /// Mini-batch loss and its gradient in canonical order.
    pub fn loss_and_grad(&self, params: &[f64], batch: &[&Window]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let (m, t) = (self.config.channels, self.config.horizon);
        let mut inputs = Vec::with_capacity(batch.len() * m * self.config.lookback);
        let mut targets = Vec::with_capacity(batch.len() * m * t);
        for w in batch {
            self.check_window(w)?;
            inputs.extend_from_slice(&w.input);
            targets.extend_from_slice(&w.target);
        }
        let rows = batch.len() * m;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params)?;
        let pred = self.forward(&mut tape, &vars, &inputs, rows)?;
        let target = tape.constant(Tensor::new(&[rows, t], targets)?);
        let loss = mse_loss(&mut tape, pred, target)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, vars.gradient(&grads)))
    }
}
