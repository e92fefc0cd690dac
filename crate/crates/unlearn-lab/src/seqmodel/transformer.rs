//! Decoder-only transformer trunk in double precision.
//!
//! Pre-norm blocks: `x + attn(ln1(x))` then `x + mlp(ln2(x))`, learned
//! positional embeddings, SiLU MLP, no biases outside the layer norms, and
//! an untied output head. The backward pass is written by hand and is
//! checked against central finite differences in the test suites.

use super::ModelConfig;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Flat-parameter layout. Weight matrices are row-major `[d_in x d_out]`
/// so `y = x W` reads rows of `W` contiguously.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub d: usize,
    pub h: usize,
    pub f: usize,
    pub v: usize,
    pub s: usize,
    pub n_layers: usize,
    layers_start: usize,
    layer_stride: usize,
    ln_f_start: usize,
    head_start: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff();
        let v = cfg.vocab_size;
        let s = cfg.max_seq_len;
        let layers_start = v * d + s * d;
        let layer_stride = 4 * d + 4 * d * d + 2 * d * f;
        let ln_f_start = layers_start + cfg.n_layers * layer_stride;
        let head_start = ln_f_start + 2 * d;
        Self {
            d,
            h: cfg.n_heads,
            f,
            v,
            s,
            n_layers: cfg.n_layers,
            layers_start,
            layer_stride,
            ln_f_start,
            head_start,
            total: head_start + d * v,
        }
    }

    pub fn tok_emb(&self) -> std::ops::Range<usize> {
        0..self.v * self.d
    }
    pub fn pos_emb(&self) -> std::ops::Range<usize> {
        self.v * self.d..self.v * self.d + self.s * self.d
    }
    fn layer(&self, l: usize) -> usize {
        self.layers_start + l * self.layer_stride
    }
    pub fn ln1_g(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l);
        o..o + self.d
    }
    pub fn ln1_b(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + self.d;
        o..o + self.d
    }
    pub fn wq(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 2 * self.d;
        o..o + self.d * self.d
    }
    pub fn wk(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 2 * self.d + self.d * self.d;
        o..o + self.d * self.d
    }
    pub fn wv(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 2 * self.d + 2 * self.d * self.d;
        o..o + self.d * self.d
    }
    pub fn wo(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 2 * self.d + 3 * self.d * self.d;
        o..o + self.d * self.d
    }
    pub fn ln2_g(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 2 * self.d + 4 * self.d * self.d;
        o..o + self.d
    }
    pub fn ln2_b(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 3 * self.d + 4 * self.d * self.d;
        o..o + self.d
    }
    pub fn w1(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 4 * self.d + 4 * self.d * self.d;
        o..o + self.d * self.f
    }
    pub fn w2(&self, l: usize) -> std::ops::Range<usize> {
        let o = self.layer(l) + 4 * self.d + 4 * self.d * self.d + self.d * self.f;
        o..o + self.f * self.d
    }
    pub fn ln_f_g(&self) -> std::ops::Range<usize> {
        self.ln_f_start..self.ln_f_start + self.d
    }
    pub fn ln_f_b(&self) -> std::ops::Range<usize> {
        self.ln_f_start + self.d..self.ln_f_start + 2 * self.d
    }
    /// Output head, `[d_model x vocab]`.
    pub fn head(&self) -> std::ops::Range<usize> {
        self.head_start..self.head_start + self.d * self.v
    }
}

/// out[n, j] = sum_k x[n, k] w[k, j]
fn matmul(x: &[f64], w: &[f64], n: usize, d_in: usize, d_out: usize, out: &mut [f64]) {
    out[..n * d_out].fill(0.0);
    for i in 0..n {
        let x_row = &x[i * d_in..(i + 1) * d_in];
        let out_row = &mut out[i * d_out..(i + 1) * d_out];
        for (k, &a) in x_row.iter().enumerate() {
            let w_row = &w[k * d_out..(k + 1) * d_out];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += a * wv;
            }
        }
    }
}

/// dx[n, k] = sum_j dy[n, j] w[k, j]
fn matmul_dx(dy: &[f64], w: &[f64], n: usize, d_in: usize, d_out: usize, dx: &mut [f64]) {
    for i in 0..n {
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        let dx_row = &mut dx[i * d_in..(i + 1) * d_in];
        for (k, slot) in dx_row.iter_mut().enumerate() {
            let w_row = &w[k * d_out..(k + 1) * d_out];
            *slot += dy_row.iter().zip(w_row).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// dw[k, j] += sum_n x[n, k] dy[n, j]
fn matmul_dw(x: &[f64], dy: &[f64], n: usize, d_in: usize, d_out: usize, dw: &mut [f64]) {
    for i in 0..n {
        let x_row = &x[i * d_in..(i + 1) * d_in];
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        for (k, &a) in x_row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let dw_row = &mut dw[k * d_out..(k + 1) * d_out];
            for (slot, &g) in dw_row.iter_mut().zip(dy_row) {
                *slot += a * g;
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LnTape {
    mean: Vec<f64>,
    rstd: Vec<f64>,
}

/// Row-wise layer norm; records mean and reciprocal std per row.
fn ln_rows(x: &[f64], gamma: &[f64], beta: &[f64], n: usize, d: usize, out: &mut [f64]) -> LnTape {
    let mut tape = LnTape {
        mean: vec![0.0; n],
        rstd: vec![0.0; n],
    };
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        tape.mean[i] = mean;
        tape.rstd[i] = rstd;
        let out_row = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            out_row[j] = gamma[j] * (row[j] - mean) * rstd + beta[j];
        }
    }
    tape
}

/// Backward of `ln_rows`; accumulates into dgamma/dbeta and writes dx.
#[allow(clippy::too_many_arguments)]
fn ln_rows_backward(
    dy: &[f64],
    x: &[f64],
    gamma: &[f64],
    tape: &LnTape,
    n: usize,
    d: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    for i in 0..n {
        let x_row = &x[i * d..(i + 1) * d];
        let dy_row = &dy[i * d..(i + 1) * d];
        let dx_row = &mut dx[i * d..(i + 1) * d];
        let (mean, rstd) = (tape.mean[i], tape.rstd[i]);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let xhat = (x_row[j] - mean) * rstd;
            let dxhat = dy_row[j] * gamma[j];
            dgamma[j] += dy_row[j] * xhat;
            dbeta[j] += dy_row[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let inv_d = 1.0 / d as f64;
        for j in 0..d {
            let xhat = (x_row[j] - mean) * rstd;
            let dxhat = dy_row[j] * gamma[j];
            dx_row[j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerTape {
    x_in: Vec<f64>,
    ln1: LnTape,
    n1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>, // h * n * n, causal rows
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: LnTape,
    n2: Vec<f64>,
    u: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pub n: usize,
    layers: Vec<LayerTape>,
    x_final: Vec<f64>,
    ln_f: LnTape,
    /// Final hidden states after the last layer norm, n x d.
    pub hidden: Vec<f64>,
}

/// Full forward pass recording every intermediate needed by `backward`.
pub(crate) fn forward(layout: &Layout, params: &[f64], ids: &[usize]) -> Tape {
    let (n, d, f, heads) = (ids.len(), layout.d, layout.f, layout.h);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let tok_emb = &params[layout.tok_emb()];
    let pos_emb = &params[layout.pos_emb()];
    let mut x = vec![0.0; n * d];
    for (t, &id) in ids.iter().enumerate() {
        for j in 0..d {
            x[t * d + j] = tok_emb[id * d + j] + pos_emb[t * d + j];
        }
    }

    let mut layers = Vec::with_capacity(layout.n_layers);
    for l in 0..layout.n_layers {
        let mut lt = LayerTape {
            x_in: x.clone(),
            n1: vec![0.0; n * d],
            q: vec![0.0; n * d],
            k: vec![0.0; n * d],
            v: vec![0.0; n * d],
            att: vec![0.0; heads * n * n],
            ctx: vec![0.0; n * d],
            n2: vec![0.0; n * d],
            u: vec![0.0; n * f],
            s: vec![0.0; n * f],
            ..Default::default()
        };
        lt.ln1 = ln_rows(
            &lt.x_in,
            &params[layout.ln1_g(l)],
            &params[layout.ln1_b(l)],
            n,
            d,
            &mut lt.n1,
        );
        matmul(&lt.n1, &params[layout.wq(l)], n, d, d, &mut lt.q);
        matmul(&lt.n1, &params[layout.wk(l)], n, d, d, &mut lt.k);
        matmul(&lt.n1, &params[layout.wv(l)], n, d, d, &mut lt.v);

        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let row_start = h * n * n + i * n;
                let att_row = &mut lt.att[row_start..row_start + i + 1];
                let q_row = &lt.q[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for (j, slot) in att_row.iter_mut().enumerate() {
                    let k_row = &lt.k[j * d + off..j * d + off + dh];
                    let score = q_row.iter().zip(k_row).map(|(a, b)| a * b).sum::<f64>() * scale;
                    *slot = score;
                    max = max.max(score);
                }
                let mut sum = 0.0;
                for slot in att_row.iter_mut() {
                    *slot = (*slot - max).exp();
                    sum += *slot;
                }
                for slot in att_row.iter_mut() {
                    *slot /= sum;
                }
                let att_row = &lt.att[row_start..row_start + i + 1];
                let ctx_row = &mut lt.ctx[i * d + off..i * d + off + dh];
                for (j, &p) in att_row.iter().enumerate() {
                    let v_row = &lt.v[j * d + off..j * d + off + dh];
                    for (c, &vv) in ctx_row.iter_mut().zip(v_row) {
                        *c += p * vv;
                    }
                }
            }
        }

        let mut attn_out = vec![0.0; n * d];
        matmul(&lt.ctx, &params[layout.wo(l)], n, d, d, &mut attn_out);
        for (xi, ai) in x.iter_mut().zip(&attn_out) {
            *xi += ai;
        }
        lt.x_mid = x.clone();

        lt.ln2 = ln_rows(
            &lt.x_mid,
            &params[layout.ln2_g(l)],
            &params[layout.ln2_b(l)],
            n,
            d,
            &mut lt.n2,
        );
        matmul(&lt.n2, &params[layout.w1(l)], n, d, f, &mut lt.u);
        for (si, &ui) in lt.s.iter_mut().zip(&lt.u) {
            *si = ui * sigmoid(ui);
        }
        let mut mlp_out = vec![0.0; n * d];
        matmul(&lt.s, &params[layout.w2(l)], n, f, d, &mut mlp_out);
        for (xi, mi) in x.iter_mut().zip(&mlp_out) {
            *xi += mi;
        }
        layers.push(lt);
    }

    let x_final = x;
    let mut hidden = vec![0.0; n * d];
    let ln_f = ln_rows(
        &x_final,
        &params[layout.ln_f_g()],
        &params[layout.ln_f_b()],
        n,
        d,
        &mut hidden,
    );
    Tape {
        n,
        layers,
        x_final,
        ln_f,
        hidden,
    }
}

/// Backward through the trunk given the gradient w.r.t. the final hidden
/// states; accumulates parameter gradients into `grad`.
pub(crate) fn backward(
    layout: &Layout,
    params: &[f64],
    ids: &[usize],
    tape: &Tape,
    d_hidden: &[f64],
    grad: &mut [f64],
) {
    let (n, d, f, heads) = (tape.n, layout.d, layout.f, layout.h);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = vec![0.0; n * d];
    {
        // Split disjoint gradient views out of the flat buffer.
        let (g_pre, g_rest) = grad.split_at_mut(layout.ln_f_b().start);
        let dgf = &mut g_pre[layout.ln_f_g()];
        let dbf = &mut g_rest[..d];
        ln_rows_backward(
            d_hidden,
            &tape.x_final,
            &params[layout.ln_f_g()],
            &tape.ln_f,
            n,
            d,
            dgf,
            dbf,
            &mut dx,
        );
    }

    for l in (0..layout.n_layers).rev() {
        let lt = &tape.layers[l];

        // MLP block: x = x_mid + s W2, s = silu(u), u = n2 W1.
        let d_mlp_out = dx.clone(); // residual passes dx through unchanged
        let mut d_s = vec![0.0; n * f];
        matmul_dx(&d_mlp_out, &params[layout.w2(l)], n, f, d, &mut d_s);
        matmul_dw(&lt.s, &d_mlp_out, n, f, d, &mut grad[layout.w2(l)]);
        let mut d_u = vec![0.0; n * f];
        for i in 0..n * f {
            let sig = sigmoid(lt.u[i]);
            d_u[i] = d_s[i] * (sig * (1.0 + lt.u[i] * (1.0 - sig)));
        }
        let mut d_n2 = vec![0.0; n * d];
        matmul_dx(&d_u, &params[layout.w1(l)], n, d, f, &mut d_n2);
        matmul_dw(&lt.n2, &d_u, n, d, f, &mut grad[layout.w1(l)]);
        {
            let (g_pre, g_rest) = grad.split_at_mut(layout.ln2_b(l).start);
            ln_rows_backward(
                &d_n2,
                &lt.x_mid,
                &params[layout.ln2_g(l)],
                &lt.ln2,
                n,
                d,
                &mut g_pre[layout.ln2_g(l)],
                &mut g_rest[..d],
                &mut dx,
            );
        }

        // Attention block: x_mid = x_in + ctx Wo.
        let d_attn_out = dx.clone();
        let mut d_ctx = vec![0.0; n * d];
        matmul_dx(&d_attn_out, &params[layout.wo(l)], n, d, d, &mut d_ctx);
        matmul_dw(&lt.ctx, &d_attn_out, n, d, d, &mut grad[layout.wo(l)]);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let att_row = &lt.att[h * n * n + i * n..h * n * n + i * n + i + 1];
                let d_ctx_row = &d_ctx[i * d + off..i * d + off + dh];
                // d_att[j] = d_ctx_i . v_j ; dv_j += att[j] * d_ctx_i
                let mut d_att = vec![0.0; i + 1];
                for (j, slot) in d_att.iter_mut().enumerate() {
                    let v_row = &lt.v[j * d + off..j * d + off + dh];
                    *slot = d_ctx_row.iter().zip(v_row).map(|(a, b)| a * b).sum();
                    let dv_row = &mut dv[j * d + off..j * d + off + dh];
                    for (s, &c) in dv_row.iter_mut().zip(d_ctx_row) {
                        *s += att_row[j] * c;
                    }
                }
                // Softmax backward on the causal row.
                let dot: f64 = att_row.iter().zip(&d_att).map(|(a, b)| a * b).sum();
                for j in 0..=i {
                    let d_score = att_row[j] * (d_att[j] - dot) * scale;
                    let k_row = &lt.k[j * d + off..j * d + off + dh];
                    let q_row = &lt.q[i * d + off..i * d + off + dh];
                    let dq_row = &mut dq[i * d + off..i * d + off + dh];
                    for (s, &kv) in dq_row.iter_mut().zip(k_row) {
                        *s += d_score * kv;
                    }
                    let dk_row = &mut dk[j * d + off..j * d + off + dh];
                    for (s, &qv) in dk_row.iter_mut().zip(q_row) {
                        *s += d_score * qv;
                    }
                }
            }
        }

        let mut d_n1 = vec![0.0; n * d];
        matmul_dx(&dq, &params[layout.wq(l)], n, d, d, &mut d_n1);
        matmul_dx(&dk, &params[layout.wk(l)], n, d, d, &mut d_n1);
        matmul_dx(&dv, &params[layout.wv(l)], n, d, d, &mut d_n1);
        matmul_dw(&lt.n1, &dq, n, d, d, &mut grad[layout.wq(l)]);
        matmul_dw(&lt.n1, &dk, n, d, d, &mut grad[layout.wk(l)]);
        matmul_dw(&lt.n1, &dv, n, d, d, &mut grad[layout.wv(l)]);
        {
            let (g_pre, g_rest) = grad.split_at_mut(layout.ln1_b(l).start);
            ln_rows_backward(
                &d_n1,
                &lt.x_in,
                &params[layout.ln1_g(l)],
                &lt.ln1,
                n,
                d,
                &mut g_pre[layout.ln1_g(l)],
                &mut g_rest[..d],
                &mut dx,
            );
        }
    }

    let d_tok = &mut grad[layout.tok_emb()];
    for (t, &id) in ids.iter().enumerate() {
        for j in 0..d {
            d_tok[id * d + j] += dx[t * d + j];
        }
    }
    let d_pos = &mut grad[layout.pos_emb()];
    for t in 0..n {
        for j in 0..d {
            d_pos[t * d + j] += dx[t * d + j];
        }
    }
}

/// Logits for one hidden row.
pub(crate) fn head_logits(layout: &Layout, params: &[f64], hidden_row: &[f64]) -> Vec<f64> {
    let head = &params[layout.head()];
    let mut logits = vec![0.0; layout.v];
    for (k, &a) in hidden_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &head[k * layout.v..(k + 1) * layout.v];
        for (slot, &w) in logits.iter_mut().zip(row) {
            *slot += a * w;
        }
    }
    logits
}

/// Log-softmax in place; returns the log partition offset applied.
pub(crate) fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    for x in logits.iter_mut() {
        *x -= lse;
    }
}
