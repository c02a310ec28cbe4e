//! Region-conditioned LSTM language model.
//!
//! The conditioning vector is projected to the initial hidden state; the
//! model then reads `<bos>, w_1 .. w_T` and predicts `w_1 .. w_T, <eos>`.
//! The same model scores queries (teacher-forced NLL) and generates captions
//! (greedy decoding). Parameters live in one flat buffer so that training,
//! gradient checking and serialization can treat them uniformly.

mod bundle;
mod gradcheck;
mod math;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID, UNK_ID};

pub use bundle::{ModelBundle, ModelRole, Tensors, BUNDLE_FORMAT_VERSION};
pub(crate) use bundle::{matrix_flat, matrix_rows};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use train::{fit, OptimizerKind, TrainConfig};

use math::{axpy, dot, log_softmax, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub cond_dim: usize,
}

impl SeqDims {
    /// Offsets of each tensor in the flat parameter buffer.
    pub fn layout(&self) -> Layout {
        let SeqDims {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: h,
            cond_dim: c,
        } = *self;
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let embedding = next(v * e);
        let cond_weight = next(h * c);
        let cond_bias = next(h);
        let gate_weight = next(4 * h * (e + h));
        let gate_bias = next(4 * h);
        let out_weight = next(v * h);
        let out_bias = next(v);
        Layout {
            embedding,
            cond_weight,
            cond_bias,
            gate_weight,
            gate_bias,
            out_weight,
            out_bias,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size <= UNK_ID || self.embed_dim == 0 || self.hidden_dim == 0 || self.cond_dim == 0
        {
            return Err(Error::Dimension(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

type Range = std::ops::Range<usize>;

/// Tensor placement. Gate rows are ordered input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: Range,
    pub cond_weight: Range,
    pub cond_bias: Range,
    pub gate_weight: Range,
    pub gate_bias: Range,
    pub out_weight: Range,
    pub out_bias: Range,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    vocab: Vocabulary,
    dims: SeqDims,
    params: Vec<f64>,
}

/// Uniform `[-s, s]` initialization with `s = 1/sqrt(fan_in)`, zero biases and
/// a forget-gate bias of 1.
pub fn init_model(
    vocab: Vocabulary,
    embed_dim: usize,
    hidden_dim: usize,
    cond_dim: usize,
    seed: u64,
) -> Result<SeqModel> {
    let dims = SeqDims {
        vocab_size: vocab.len(),
        embed_dim,
        hidden_dim,
        cond_dim,
    };
    dims.validate()?;
    let layout = dims.layout();
    let mut params = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |range: Range, fan_in: usize| {
        let s = 1.0 / (fan_in as f64).sqrt();
        for p in &mut params[range] {
            *p = rng.gen_range(-s..=s);
        }
    };
    fill(layout.embedding.clone(), embed_dim);
    fill(layout.cond_weight.clone(), cond_dim);
    fill(layout.gate_weight.clone(), embed_dim + hidden_dim);
    fill(layout.out_weight.clone(), hidden_dim);
    let h = hidden_dim;
    let forget = layout.gate_bias.start + h..layout.gate_bias.start + 2 * h;
    params[forget].fill(1.0);
    Ok(SeqModel {
        vocab,
        dims,
        params,
    })
}

impl SeqModel {
    pub fn from_parts(vocab: Vocabulary, dims: SeqDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if dims.vocab_size != vocab.len() {
            return Err(Error::Dimension(format!(
                "vocabulary has {} entries, dims say {}",
                vocab.len(),
                dims.vocab_size
            )));
        }
        if params.len() != dims.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Dimension("non-finite parameter".into()));
        }
        Ok(SeqModel {
            vocab,
            dims,
            params,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dims(&self) -> SeqDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn net(&self) -> SeqNet<'_> {
        SeqNet::new(self.dims, &self.params)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    /// One recurrent step on an already-embedded input.
    pub fn cell_step(&self, input: &[f64], hidden: &[f64], cell: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dims;
        if input.len() != d.embed_dim || hidden.len() != d.hidden_dim || cell.len() != d.hidden_dim {
            return Err(Error::Dimension("cell_step input sizes".into()));
        }
        let mut xh = input.to_vec();
        xh.extend_from_slice(hidden);
        let s = self.net().step(xh, cell);
        Ok((s.h, s.c))
    }

    /// Teacher-forced negative log-likelihood of `tokens` followed by `<eos>`.
    pub fn sequence_nll(&self, condition: &[f64], tokens: &[usize]) -> Result<f64> {
        self.net().nll(condition, tokens)
    }

    /// Greedy decoding. Specials never appear in the output; ties go to the
    /// lowest id and `<eos>` only ends the caption when it strictly wins.
    pub fn generate_caption(&self, condition: &[f64], max_len: usize) -> Result<Vec<usize>> {
        self.net().generate(condition, max_len)
    }

    pub fn generate_caption_tokens(&self, condition: &[f64], max_len: usize) -> Result<Vec<String>> {
        Ok(self.vocab.decode(&self.generate_caption(condition, max_len)?))
    }

    /// Fits the model on `(condition, token ids)` pairs; returns the trained
    /// model and the mean loss of every epoch.
    pub fn train(&self, dataset: &[(Vec<f64>, Vec<usize>)], config: &TrainConfig) -> Result<(SeqModel, Vec<f64>)> {
        if dataset.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (cond, tokens) in dataset {
            self.net().check_inputs(cond, tokens)?;
        }
        let mut params = self.params.clone();
        let dims = self.dims;
        let losses = fit(&mut params, dataset.len(), config, |p, i, _epoch, grad| {
            let (cond, tokens) = &dataset[i];
            SeqNet::new(dims, p).nll_grad(cond, tokens, 1.0, grad, None, GradFault::None)
        })?;
        let model = SeqModel {
            vocab: self.vocab.clone(),
            dims,
            params,
        };
        Ok((model, losses))
    }

    /// Compares the analytic gradient of [`sequence_nll`](Self::sequence_nll)
    /// at one example against central finite differences.
    pub fn grad_check(&self, condition: &[f64], tokens: &[usize], config: &GradCheckConfig) -> Result<GradCheckReport> {
        self.grad_check_with_fault(condition, tokens, config, GradFault::None)
    }

    #[doc(hidden)]
    pub fn grad_check_with_fault(
        &self,
        condition: &[f64],
        tokens: &[usize],
        config: &GradCheckConfig,
        fault: GradFault,
    ) -> Result<GradCheckReport> {
        let net = self.net();
        net.check_inputs(condition, tokens)?;
        let mut grad = vec![0.0; self.params.len()];
        net.nll_grad(condition, tokens, 1.0, &mut grad, None, fault)?;
        let dims = self.dims;
        finite_difference_check(
            &self.params,
            &grad,
            |p| SeqNet::new(dims, p).nll(condition, tokens),
            config,
        )
    }
}

/// Deliberate gradient corruption used to show the gradient check can fail.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradFault {
    None,
    /// Multiply the forget-gate pre-activation gradient by this factor.
    ForgetGate(f64),
}

/// Per-step activations kept for backpropagation.
struct Step {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Borrowed view of a parameter buffer with the model's math.
#[derive(Clone, Copy)]
pub struct SeqNet<'a> {
    dims: SeqDims,
    layout_total: usize,
    params: &'a [f64],
}

impl<'a> SeqNet<'a> {
    pub fn new(dims: SeqDims, params: &'a [f64]) -> Self {
        let layout_total = dims.param_count();
        debug_assert_eq!(params.len(), layout_total);
        SeqNet {
            dims,
            layout_total,
            params,
        }
    }

    pub fn dims(&self) -> SeqDims {
        self.dims
    }

    fn t(&self, r: Range) -> &'a [f64] {
        &self.params[r]
    }

    pub fn check_inputs(&self, condition: &[f64], tokens: &[usize]) -> Result<()> {
        if condition.len() != self.dims.cond_dim {
            return Err(Error::Dimension(format!(
                "condition has {} entries, model expects {}",
                condition.len(),
                self.dims.cond_dim
            )));
        }
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty token sequence".into()));
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.dims.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.dims.vocab_size,
            });
        }
        Ok(())
    }

    fn initial_hidden(&self, condition: &[f64]) -> Vec<f64> {
        let l = self.dims.layout();
        let (w, b) = (self.t(l.cond_weight), self.t(l.cond_bias));
        let c = self.dims.cond_dim;
        (0..self.dims.hidden_dim)
            .map(|j| (dot(&w[j * c..(j + 1) * c], condition) + b[j]).tanh())
            .collect()
    }

    fn embedding(&self, token: usize) -> &'a [f64] {
        let e = self.dims.embed_dim;
        let l = self.dims.layout();
        &self.t(l.embedding)[token * e..(token + 1) * e]
    }

    fn step(&self, xh: Vec<f64>, c_prev: &[f64]) -> Step {
        let h = self.dims.hidden_dim;
        let n_in = self.dims.embed_dim + h;
        let l = self.dims.layout();
        let (w, b) = (self.t(l.gate_weight), self.t(l.gate_bias));
        let mut gates: Vec<f64> = (0..4 * h)
            .map(|r| dot(&w[r * n_in..(r + 1) * n_in], &xh) + b[r])
            .collect();
        for g in &mut gates[..3 * h] {
            *g = sigmoid(*g);
        }
        for g in &mut gates[3 * h..] {
            *g = g.tanh();
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[3 * h + j];
            tanh_c[j] = c[j].tanh();
            hn[j] = gates[2 * h + j] * tanh_c[j];
        }
        Step {
            xh,
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h: hn,
        }
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let l = self.dims.layout();
        let (w, b) = (self.t(l.out_weight), self.t(l.out_bias));
        let h = self.dims.hidden_dim;
        (0..self.dims.vocab_size)
            .map(|v| dot(&w[v * h..(v + 1) * h], hidden) + b[v])
            .collect()
    }

    fn input(&self, token: usize, hidden: &[f64]) -> Vec<f64> {
        let mut xh = Vec::with_capacity(self.dims.embed_dim + self.dims.hidden_dim);
        xh.extend_from_slice(self.embedding(token));
        xh.extend_from_slice(hidden);
        xh
    }

    pub fn nll(&self, condition: &[f64], tokens: &[usize]) -> Result<f64> {
        self.check_inputs(condition, tokens)?;
        let mut h = self.initial_hidden(condition);
        let mut c = vec![0.0; self.dims.hidden_dim];
        let mut loss = 0.0;
        let inputs = std::iter::once(BOS_ID).chain(tokens.iter().copied());
        let targets = tokens.iter().copied().chain(std::iter::once(EOS_ID));
        for (x, y) in inputs.zip(targets) {
            let s = self.step(self.input(x, &h), &c);
            let lp = log_softmax(&self.logits(&s.h));
            loss -= lp[y];
            h = s.h;
            c = s.c;
        }
        Ok(loss)
    }

    /// Adds `scale * d(nll)/d(params)` into `grad` (and into `dcond` when
    /// given) and returns the unscaled loss.
    pub fn nll_grad(
        &self,
        condition: &[f64],
        tokens: &[usize],
        scale: f64,
        grad: &mut [f64],
        dcond: Option<&mut [f64]>,
        fault: GradFault,
    ) -> Result<f64> {
        self.check_inputs(condition, tokens)?;
        debug_assert_eq!(grad.len(), self.layout_total);
        let d = self.dims;
        let (e, h, v) = (d.embed_dim, d.hidden_dim, d.vocab_size);
        let n_in = e + h;
        let l = d.layout();

        let h0 = self.initial_hidden(condition);
        let inputs: Vec<usize> = std::iter::once(BOS_ID).chain(tokens.iter().copied()).collect();
        let targets: Vec<usize> = tokens.iter().copied().chain(std::iter::once(EOS_ID)).collect();

        let mut steps: Vec<Step> = Vec::with_capacity(inputs.len());
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        let mut loss = 0.0;
        {
            let mut hc = h0.clone();
            let mut cc = vec![0.0; h];
            for (&x, &y) in inputs.iter().zip(&targets) {
                let s = self.step(self.input(x, &hc), &cc);
                let lp = log_softmax(&self.logits(&s.h));
                loss -= lp[y];
                hc = s.h.clone();
                cc = s.c.clone();
                probs.push(lp.into_iter().map(f64::exp).collect());
                steps.push(s);
            }
        }

        let w_gate = self.t(l.gate_weight.clone());
        let w_out = self.t(l.out_weight.clone());
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dlogits = vec![0.0; v];
        let mut dz = vec![0.0; 4 * h];
        let mut dxh = vec![0.0; n_in];

        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            for (k, p) in probs[t].iter().enumerate() {
                dlogits[k] = scale * p;
            }
            dlogits[targets[t]] -= scale;

            let mut dh = dh_next.clone();
            {
                let (gw, gb) = grad.split_at_mut(l.out_bias.start);
                let gw = &mut gw[l.out_weight.clone()];
                for k in 0..v {
                    let g = dlogits[k];
                    gb[k] += g;
                    axpy(g, &s.h, &mut gw[k * h..(k + 1) * h]);
                    axpy(g, &w_out[k * h..(k + 1) * h], &mut dh);
                }
            }

            let g = &s.gates;
            for j in 0..h {
                let (gi, gf, go, gg) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let d_o = dh[j] * s.tanh_c[j];
                let dc = dc_next[j] + dh[j] * go * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let d_f = dc * s.c_prev[j];
                let d_i = dc * gg;
                let d_g = dc * gi;
                dc_next[j] = dc * gf;
                dz[j] = d_i * gi * (1.0 - gi);
                dz[h + j] = d_f * gf * (1.0 - gf);
                dz[2 * h + j] = d_o * go * (1.0 - go);
                dz[3 * h + j] = d_g * (1.0 - gg * gg);
            }
            if let GradFault::ForgetGate(factor) = fault {
                for x in &mut dz[h..2 * h] {
                    *x *= factor;
                }
            }

            dxh.fill(0.0);
            {
                let (gw, gb) = grad.split_at_mut(l.gate_bias.start);
                let gw = &mut gw[l.gate_weight.clone()];
                for r in 0..4 * h {
                    let g = dz[r];
                    if g == 0.0 {
                        continue;
                    }
                    gb[r] += g;
                    axpy(g, &s.xh, &mut gw[r * n_in..(r + 1) * n_in]);
                    axpy(g, &w_gate[r * n_in..(r + 1) * n_in], &mut dxh);
                }
            }
            let tok = inputs[t];
            let ge = &mut grad[l.embedding.start + tok * e..l.embedding.start + (tok + 1) * e];
            for (a, b) in ge.iter_mut().zip(&dxh[..e]) {
                *a += b;
            }
            dh_next.copy_from_slice(&dxh[e..]);
        }

        // Initial hidden state: h0 = tanh(Wc * cond + bc).
        let c_dim = d.cond_dim;
        let w_cond = self.t(l.cond_weight.clone());
        let mut dcond = dcond;
        for j in 0..h {
            let da = dh_next[j] * (1.0 - h0[j] * h0[j]);
            if da == 0.0 {
                continue;
            }
            grad[l.cond_bias.start + j] += da;
            let row = l.cond_weight.start + j * c_dim;
            axpy(da, condition, &mut grad[row..row + c_dim]);
            if let Some(dc) = dcond.as_deref_mut() {
                axpy(da, &w_cond[j * c_dim..(j + 1) * c_dim], dc);
            }
        }
        Ok(loss)
    }

    pub fn generate(&self, condition: &[f64], max_len: usize) -> Result<Vec<usize>> {
        if condition.len() != self.dims.cond_dim {
            return Err(Error::Dimension("condition size".into()));
        }
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        let mut h = self.initial_hidden(condition);
        let mut c = vec![0.0; self.dims.hidden_dim];
        let mut out = Vec::new();
        let mut prev = BOS_ID;
        while out.len() < max_len {
            let s = self.step(self.input(prev, &h), &c);
            let logits = self.logits(&s.h);
            let mut best = UNK_ID + 1;
            for k in UNK_ID + 2..logits.len() {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            if best >= logits.len() || logits[EOS_ID] > logits[best] {
                break;
            }
            out.push(best);
            prev = best;
            h = s.h;
            c = s.c;
        }
        Ok(out)
    }

    /// Softmax distributions at every step of a teacher-forced pass.
    pub fn step_distributions(&self, condition: &[f64], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(condition, tokens)?;
        let mut h = self.initial_hidden(condition);
        let mut c = vec![0.0; self.dims.hidden_dim];
        let mut out = Vec::new();
        for x in std::iter::once(BOS_ID).chain(tokens.iter().copied()) {
            let s = self.step(self.input(x, &h), &c);
            out.push(log_softmax(&self.logits(&s.h)).into_iter().map(f64::exp).collect());
            h = s.h;
            c = s.c;
        }
        Ok(out)
    }
}
