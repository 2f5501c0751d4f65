//! Pre-LN transformer tower shared by both encoders. The prefix side runs it
//! causally, the phrase side bidirectionally; parameters live in an [`Arena`]
//! under a tower-specific name prefix, so the same code serves both.

use rand::Rng;

use super::arena::{Arena, ArenaBuilder};
use super::ops;
use crate::corpus::TokenId;

#[derive(Debug, Clone)]
pub struct TowerConfig {
    /// Name prefix of every tensor of this tower ("prefix", "phrase").
    pub name: String,
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_pos: usize,
    pub hidden: usize,
    /// Projection head input width (d_model, or 2·d_model for span concat).
    pub proj_in: usize,
    pub proj_out: usize,
}

impl TowerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    fn t(&self, rest: &str) -> String {
        format!("{}.{rest}", self.name)
    }

    fn l(&self, layer: usize, rest: &str) -> String {
        format!("{}.l{layer}.{rest}", self.name)
    }
}

/// Declare every tensor of one tower on the builder, in a fixed order.
pub fn declare_tower(mut b: ArenaBuilder, cfg: &TowerConfig) -> ArenaBuilder {
    let dm = cfg.d_model;
    b = b
        .tensor(cfg.t("tok_emb"), &[cfg.vocab, dm])
        .tensor(cfg.t("pos_emb"), &[cfg.max_pos, dm]);
    for i in 0..cfg.layers {
        b = b
            .tensor(cfg.l(i, "ln1.g"), &[dm])
            .tensor(cfg.l(i, "ln1.b"), &[dm])
            .tensor(cfg.l(i, "attn.wq"), &[dm, dm])
            .tensor(cfg.l(i, "attn.bq"), &[dm])
            .tensor(cfg.l(i, "attn.wk"), &[dm, dm])
            .tensor(cfg.l(i, "attn.bk"), &[dm])
            .tensor(cfg.l(i, "attn.wv"), &[dm, dm])
            .tensor(cfg.l(i, "attn.bv"), &[dm])
            .tensor(cfg.l(i, "attn.wo"), &[dm, dm])
            .tensor(cfg.l(i, "attn.bo"), &[dm])
            .tensor(cfg.l(i, "ln2.g"), &[dm])
            .tensor(cfg.l(i, "ln2.b"), &[dm])
            .tensor(cfg.l(i, "ffn.w1"), &[dm, cfg.hidden])
            .tensor(cfg.l(i, "ffn.b1"), &[cfg.hidden])
            .tensor(cfg.l(i, "ffn.w2"), &[cfg.hidden, dm])
            .tensor(cfg.l(i, "ffn.b2"), &[dm]);
    }
    b.tensor(cfg.t("lnf.g"), &[dm])
        .tensor(cfg.t("lnf.b"), &[dm])
        .tensor(cfg.t("proj.w"), &[cfg.proj_in, cfg.proj_out])
        .tensor(cfg.t("proj.b"), &[cfg.proj_out])
}

/// Seeded init: N(0, 0.02) for weights and embeddings, gains 1, biases 0.
/// Walks specs in declaration order so the draw sequence is reproducible.
pub fn init_arena(arena: &mut Arena, rng: &mut impl Rng) {
    let specs: Vec<_> = arena.specs().to_vec();
    for spec in specs {
        let last = spec.name.rsplit('.').next().unwrap_or("");
        let data = &mut arena.data[spec.offset..spec.offset + spec.len()];
        if last == "g" {
            data.fill(1.0);
        } else if last.starts_with('b') {
            data.fill(0.0);
        } else {
            for v in data {
                *v = ops::normal_sample(rng, 0.02);
            }
        }
    }
}

pub struct LayerCache {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    ln1_out: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// [heads × t × t] attention probabilities; masked slots stay 0.
    probs: Vec<f64>,
    att_concat: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    ln2_out: Vec<f64>,
    ffn_pre: Vec<f64>,
    ffn_act: Vec<f64>,
}

pub struct TowerCache {
    pub tokens: Vec<TokenId>,
    pub t: usize,
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// Last-layer states after the final layer norm, [t × d_model].
    pub states: Vec<f64>,
}

/// Run the tower over a token sequence (positions 0..t). Panics in debug mode
/// on empty input or overlong sequences — callers enforce windowing.
pub fn tower_forward(arena: &Arena, cfg: &TowerConfig, tokens: &[TokenId], causal: bool) -> TowerCache {
    let t = tokens.len();
    let dm = cfg.d_model;
    debug_assert!(t >= 1 && t <= cfg.max_pos, "sequence length {t}");

    let tok_emb = arena.view(&cfg.t("tok_emb"));
    let pos_emb = arena.view(&cfg.t("pos_emb"));
    let mut x = vec![0.0; t * dm];
    for (ti, &tok) in tokens.iter().enumerate() {
        let trow = &tok_emb[tok as usize * dm..(tok as usize + 1) * dm];
        let prow = &pos_emb[ti * dm..(ti + 1) * dm];
        let xrow = &mut x[ti * dm..(ti + 1) * dm];
        for i in 0..dm {
            xrow[i] = trow[i] + prow[i];
        }
    }

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for li in 0..cfg.layers {
        let x_in = x;
        let (ln1_out, ln1_xhat, ln1_rstd) = ops::layernorm_forward(
            &x_in,
            arena.view(&cfg.l(li, "ln1.g")),
            arena.view(&cfg.l(li, "ln1.b")),
            t,
            dm,
        );
        let q = ops::linear_forward(&ln1_out, arena.view(&cfg.l(li, "attn.wq")), arena.view(&cfg.l(li, "attn.bq")), t, dm, dm);
        let k = ops::linear_forward(&ln1_out, arena.view(&cfg.l(li, "attn.wk")), arena.view(&cfg.l(li, "attn.bk")), t, dm, dm);
        let v = ops::linear_forward(&ln1_out, arena.view(&cfg.l(li, "attn.wv")), arena.view(&cfg.l(li, "attn.bv")), t, dm, dm);

        let dh = cfg.head_dim();
        let mut probs = vec![0.0; cfg.heads * t * t];
        let mut att_concat = vec![0.0; t * dm];
        for h in 0..cfg.heads {
            let off = h * dh;
            for i in 0..t {
                let limit = if causal { i + 1 } else { t };
                let qrow = &q[i * dm + off..i * dm + off + dh];
                let prow = &mut probs[h * t * t + i * t..h * t * t + i * t + limit];
                for (j, pv) in prow.iter_mut().enumerate() {
                    let krow = &k[j * dm + off..j * dm + off + dh];
                    let mut s = 0.0;
                    for (a, b) in qrow.iter().zip(krow) {
                        s += a * b;
                    }
                    *pv = s * scale;
                }
                ops::softmax_inplace(prow);
                let orow_base = i * dm + off;
                for j in 0..limit {
                    let w = probs[h * t * t + i * t + j];
                    if w == 0.0 {
                        continue;
                    }
                    let vrow = &v[j * dm + off..j * dm + off + dh];
                    for (idx, &vv) in vrow.iter().enumerate() {
                        att_concat[orow_base + idx] += w * vv;
                    }
                }
            }
        }
        let attn_out = ops::linear_forward(&att_concat, arena.view(&cfg.l(li, "attn.wo")), arena.view(&cfg.l(li, "attn.bo")), t, dm, dm);

        let mut x_mid = x_in.clone();
        for (a, b) in x_mid.iter_mut().zip(&attn_out) {
            *a += b;
        }
        let (ln2_out, ln2_xhat, ln2_rstd) = ops::layernorm_forward(
            &x_mid,
            arena.view(&cfg.l(li, "ln2.g")),
            arena.view(&cfg.l(li, "ln2.b")),
            t,
            dm,
        );
        let ffn_pre = ops::linear_forward(&ln2_out, arena.view(&cfg.l(li, "ffn.w1")), arena.view(&cfg.l(li, "ffn.b1")), t, dm, cfg.hidden);
        let ffn_act: Vec<f64> = ffn_pre.iter().map(|&p| ops::gelu(p)).collect();
        let ffn_out = ops::linear_forward(&ffn_act, arena.view(&cfg.l(li, "ffn.w2")), arena.view(&cfg.l(li, "ffn.b2")), t, cfg.hidden, dm);

        let mut x_next = x_mid.clone();
        for (a, b) in x_next.iter_mut().zip(&ffn_out) {
            *a += b;
        }
        layers.push(LayerCache {
            ln1_xhat,
            ln1_rstd,
            ln1_out,
            q,
            k,
            v,
            probs,
            att_concat,
            ln2_xhat,
            ln2_rstd,
            ln2_out,
            ffn_pre,
            ffn_act,
        });
        x = x_next;
    }

    let (states, lnf_xhat, lnf_rstd) =
        ops::layernorm_forward(&x, arena.view(&cfg.t("lnf.g")), arena.view(&cfg.t("lnf.b")), t, dm);

    TowerCache {
        tokens: tokens.to_vec(),
        t,
        layers,
        lnf_xhat,
        lnf_rstd,
        states,
    }
}

/// Backpropagate dL/d(states) through the tower, accumulating parameter
/// gradients into `grads` (same layout as the parameter arena).
pub fn tower_backward(
    arena: &Arena,
    cfg: &TowerConfig,
    cache: &TowerCache,
    causal: bool,
    d_states: &[f64],
    grads: &mut Arena,
) {
    let t = cache.t;
    let dm = cfg.d_model;
    debug_assert_eq!(d_states.len(), t * dm);

    // Final layer norm. Work on gradient buffers outside the arena first,
    // then add, because layernorm_backward accumulates into its params.
    let mut dx = {
        let mut dg = vec![0.0; dm];
        let mut db = vec![0.0; dm];
        let dx = ops::layernorm_backward(
            d_states,
            &cache.lnf_xhat,
            &cache.lnf_rstd,
            arena.view(&cfg.t("lnf.g")),
            t,
            dm,
            &mut dg,
            &mut db,
        );
        acc(grads.view_mut(&cfg.t("lnf.g")), &dg);
        acc(grads.view_mut(&cfg.t("lnf.b")), &db);
        dx
    };

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    for li in (0..cfg.layers).rev() {
        let lc = &cache.layers[li];

        // x_next = x_mid + ffn(ln2(x_mid)); dx currently holds dL/dx_next.
        let d_ffn_out = dx.clone();
        let mut dw2 = vec![0.0; cfg.hidden * dm];
        let mut db2 = vec![0.0; dm];
        let d_ffn_act = ops::linear_backward(
            &lc.ffn_act,
            arena.view(&cfg.l(li, "ffn.w2")),
            &d_ffn_out,
            t,
            cfg.hidden,
            dm,
            &mut dw2,
            &mut db2,
        );
        acc(grads.view_mut(&cfg.l(li, "ffn.w2")), &dw2);
        acc(grads.view_mut(&cfg.l(li, "ffn.b2")), &db2);

        let d_ffn_pre: Vec<f64> = d_ffn_act
            .iter()
            .zip(&lc.ffn_pre)
            .map(|(&d, &p)| d * ops::gelu_grad(p))
            .collect();
        let mut dw1 = vec![0.0; dm * cfg.hidden];
        let mut db1 = vec![0.0; cfg.hidden];
        let d_ln2_out = ops::linear_backward(
            &lc.ln2_out,
            arena.view(&cfg.l(li, "ffn.w1")),
            &d_ffn_pre,
            t,
            dm,
            cfg.hidden,
            &mut dw1,
            &mut db1,
        );
        acc(grads.view_mut(&cfg.l(li, "ffn.w1")), &dw1);
        acc(grads.view_mut(&cfg.l(li, "ffn.b1")), &db1);

        let mut dg2 = vec![0.0; dm];
        let mut db2n = vec![0.0; dm];
        let d_x_mid_ln = ops::layernorm_backward(
            &d_ln2_out,
            &lc.ln2_xhat,
            &lc.ln2_rstd,
            arena.view(&cfg.l(li, "ln2.g")),
            t,
            dm,
            &mut dg2,
            &mut db2n,
        );
        acc(grads.view_mut(&cfg.l(li, "ln2.g")), &dg2);
        acc(grads.view_mut(&cfg.l(li, "ln2.b")), &db2n);

        // dL/dx_mid = residual + layer-norm path.
        let mut d_x_mid = dx;
        for (a, b) in d_x_mid.iter_mut().zip(&d_x_mid_ln) {
            *a += b;
        }

        // x_mid = x_in + attn(ln1(x_in)); d_attn_out = d_x_mid.
        let mut dwo = vec![0.0; dm * dm];
        let mut dbo = vec![0.0; dm];
        let d_att_concat = ops::linear_backward(
            &lc.att_concat,
            arena.view(&cfg.l(li, "attn.wo")),
            &d_x_mid,
            t,
            dm,
            dm,
            &mut dwo,
            &mut dbo,
        );
        acc(grads.view_mut(&cfg.l(li, "attn.wo")), &dwo);
        acc(grads.view_mut(&cfg.l(li, "attn.bo")), &dbo);

        let dh = cfg.head_dim();
        let mut dq = vec![0.0; t * dm];
        let mut dk = vec![0.0; t * dm];
        let mut dv = vec![0.0; t * dm];
        for h in 0..cfg.heads {
            let off = h * dh;
            for i in 0..t {
                let limit = if causal { i + 1 } else { t };
                let dorow = &d_att_concat[i * dm + off..i * dm + off + dh];
                let prow = &lc.probs[h * t * t + i * t..h * t * t + i * t + limit];
                // dprobs and dv.
                let mut dprobs = vec![0.0; limit];
                for j in 0..limit {
                    let vrow = &lc.v[j * dm + off..j * dm + off + dh];
                    let mut s = 0.0;
                    for (a, b) in dorow.iter().zip(vrow) {
                        s += a * b;
                    }
                    dprobs[j] = s;
                    let w = prow[j];
                    if w != 0.0 {
                        let dvrow = &mut dv[j * dm + off..j * dm + off + dh];
                        for (dvv, &dov) in dvrow.iter_mut().zip(dorow) {
                            *dvv += w * dov;
                        }
                    }
                }
                // Softmax backward over the unmasked row.
                let mut dscore = vec![0.0; limit];
                ops::softmax_backward(&dprobs, prow, &mut dscore);
                let qrow = &lc.q[i * dm + off..i * dm + off + dh];
                for j in 0..limit {
                    let g = dscore[j] * scale;
                    if g == 0.0 {
                        continue;
                    }
                    let krow = &lc.k[j * dm + off..j * dm + off + dh];
                    let dqrow = &mut dq[i * dm + off..i * dm + off + dh];
                    for (dqv, &kv) in dqrow.iter_mut().zip(krow) {
                        *dqv += g * kv;
                    }
                    let dkrow = &mut dk[j * dm + off..j * dm + off + dh];
                    for (dkv, &qv) in dkrow.iter_mut().zip(qrow) {
                        *dkv += g * qv;
                    }
                }
            }
        }

        let mut d_ln1_out = vec![0.0; t * dm];
        for (mat, bias, dmat) in [("attn.wq", "attn.bq", &dq), ("attn.wk", "attn.bk", &dk), ("attn.wv", "attn.bv", &dv)] {
            let mut dw = vec![0.0; dm * dm];
            let mut db = vec![0.0; dm];
            let dxpart = ops::linear_backward(
                &lc.ln1_out,
                arena.view(&cfg.l(li, mat)),
                dmat,
                t,
                dm,
                dm,
                &mut dw,
                &mut db,
            );
            acc(grads.view_mut(&cfg.l(li, mat)), &dw);
            acc(grads.view_mut(&cfg.l(li, bias)), &db);
            for (a, b) in d_ln1_out.iter_mut().zip(&dxpart) {
                *a += b;
            }
        }

        let mut dg1 = vec![0.0; dm];
        let mut db1n = vec![0.0; dm];
        let d_x_in_ln = ops::layernorm_backward(
            &d_ln1_out,
            &lc.ln1_xhat,
            &lc.ln1_rstd,
            arena.view(&cfg.l(li, "ln1.g")),
            t,
            dm,
            &mut dg1,
            &mut db1n,
        );
        acc(grads.view_mut(&cfg.l(li, "ln1.g")), &dg1);
        acc(grads.view_mut(&cfg.l(li, "ln1.b")), &db1n);

        let mut d_x_in = d_x_mid;
        for (a, b) in d_x_in.iter_mut().zip(&d_x_in_ln) {
            *a += b;
        }
        dx = d_x_in;
    }

    // Embedding backward.
    {
        let dtok = grads.view_mut(&cfg.t("tok_emb"));
        for (ti, &tok) in cache.tokens.iter().enumerate() {
            let drow = &dx[ti * dm..(ti + 1) * dm];
            let trow = &mut dtok[tok as usize * dm..(tok as usize + 1) * dm];
            for (a, b) in trow.iter_mut().zip(drow) {
                *a += b;
            }
        }
    }
    {
        let dpos = grads.view_mut(&cfg.t("pos_emb"));
        for ti in 0..t {
            let drow = &dx[ti * dm..(ti + 1) * dm];
            let prow = &mut dpos[ti * dm..(ti + 1) * dm];
            for (a, b) in prow.iter_mut().zip(drow) {
                *a += b;
            }
        }
    }
}

/// Project one state row through the tower's head: y = x·W + b.
pub fn project_forward(arena: &Arena, cfg: &TowerConfig, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), cfg.proj_in);
    ops::linear_forward(
        x,
        arena.view(&cfg.t("proj.w")),
        arena.view(&cfg.t("proj.b")),
        1,
        cfg.proj_in,
        cfg.proj_out,
    )
}

/// Backward of the projection for one row; returns dL/dx.
pub fn project_backward(
    arena: &Arena,
    cfg: &TowerConfig,
    x: &[f64],
    dy: &[f64],
    grads: &mut Arena,
) -> Vec<f64> {
    let mut dw = vec![0.0; cfg.proj_in * cfg.proj_out];
    let mut db = vec![0.0; cfg.proj_out];
    let dx = ops::linear_backward(x, arena.view(&cfg.t("proj.w")), dy, 1, cfg.proj_in, cfg.proj_out, &mut dw, &mut db);
    acc(grads.view_mut(&cfg.t("proj.w")), &dw);
    acc(grads.view_mut(&cfg.t("proj.b")), &db);
    dx
}

fn acc(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(name: &str) -> TowerConfig {
        TowerConfig {
            name: name.to_string(),
            vocab: 5,
            d_model: 8,
            layers: 1,
            heads: 2,
            max_pos: 6,
            hidden: 16,
            proj_in: 8,
            proj_out: 4,
        }
    }

    fn built(cfg: &TowerConfig, seed: u64) -> Arena {
        let mut arena = declare_tower(Arena::builder(), cfg).build();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_arena(&mut arena, &mut rng);
        arena
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg("prefix");
        let a = built(&cfg, 42);
        let b = built(&cfg, 42);
        let ca = tower_forward(&a, &cfg, &[1, 2, 3], true);
        let cb = tower_forward(&b, &cfg, &[1, 2, 3], true);
        assert_eq!(ca.states, cb.states);
    }

    #[test]
    fn causal_states_ignore_future_tokens() {
        let cfg = tiny_cfg("prefix");
        let arena = built(&cfg, 1);
        let base = tower_forward(&arena, &cfg, &[1, 2, 3, 4], true);
        let perturbed = tower_forward(&arena, &cfg, &[1, 2, 3, 0], true);
        let dm = cfg.d_model;
        // Positions 0..3 are bit-identical; position 3 differs.
        assert_eq!(base.states[..3 * dm], perturbed.states[..3 * dm]);
        assert_ne!(base.states[3 * dm..], perturbed.states[3 * dm..]);
    }

    #[test]
    fn bidirectional_states_see_context_everywhere() {
        let cfg = tiny_cfg("phrase");
        let arena = built(&cfg, 1);
        let base = tower_forward(&arena, &cfg, &[1, 2, 3, 4], false);
        let perturbed = tower_forward(&arena, &cfg, &[1, 2, 3, 0], false);
        let dm = cfg.d_model;
        // Changing the last token changes even the first position's state.
        assert_ne!(base.states[..dm], perturbed.states[..dm]);
    }

    #[test]
    fn outputs_are_finite() {
        let cfg = tiny_cfg("prefix");
        let arena = built(&cfg, 9);
        for causal in [true, false] {
            let c = tower_forward(&arena, &cfg, &[0, 4, 4, 1, 2, 3], causal);
            assert!(c.states.iter().all(|v| v.is_finite()));
        }
    }

    /// Full-tower gradient check against central finite differences, every
    /// parameter coordinate, both attention modes.
    #[test]
    fn tower_backward_matches_finite_differences() {
        for causal in [true, false] {
            let cfg = tiny_cfg("t");
            let mut arena = built(&cfg, 5);
            let tokens = [1u32, 3, 2];
            let t = tokens.len();
            let dm = cfg.d_model;
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let wloss: Vec<f64> = (0..t * dm).map(|_| rng.random_range(-1.0..1.0)).collect();

            let loss = |arena: &Arena| -> f64 {
                let c = tower_forward(arena, &cfg, &tokens, causal);
                c.states.iter().zip(&wloss).map(|(a, b)| a * b).sum()
            };

            let cache = tower_forward(&arena, &cfg, &tokens, causal);
            let mut grads = arena.zeros_like();
            tower_backward(&arena, &cfg, &cache, causal, &wloss, &mut grads);

            let h = 1e-5;
            for idx in 0..arena.len() {
                let orig = arena.data[idx];
                arena.data[idx] = orig + h;
                let lp = loss(&arena);
                arena.data[idx] = orig - h;
                let lm = loss(&arena);
                arena.data[idx] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = grads.data[idx];
                let tol = 1e-8 + 1e-5 * num.abs().max(ana.abs());
                assert!(
                    (num - ana).abs() < tol,
                    "coord {idx}: numeric {num} vs analytic {ana} (causal={causal})"
                );
            }
        }
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let cfg = tiny_cfg("t");
        let mut arena = built(&cfg, 13);
        let x: Vec<f64> = (0..cfg.proj_in).map(|i| (i as f64 * 0.37).sin()).collect();
        let dy: Vec<f64> = (0..cfg.proj_out).map(|i| 1.0 + i as f64).collect();
        let loss = |arena: &Arena| -> f64 {
            project_forward(arena, &cfg, &x)
                .iter()
                .zip(&dy)
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut grads = arena.zeros_like();
        let dx = project_backward(&arena, &cfg, &x, &dy, &mut grads);
        let h = 1e-6;
        let spec_w = arena.spec("t.proj.w").unwrap().clone();
        let spec_b = arena.spec("t.proj.b").unwrap().clone();
        for idx in spec_w.offset..spec_b.offset + spec_b.len() {
            let orig = arena.data[idx];
            arena.data[idx] = orig + h;
            let lp = loss(&arena);
            arena.data[idx] = orig - h;
            let lm = loss(&arena);
            arena.data[idx] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - grads.data[idx]).abs() < 1e-6);
        }
        // dx via fd needs a loss over x; recompute directly: dx = dy·W^T.
        let w = arena.view("t.proj.w");
        for i in 0..cfg.proj_in {
            let mut expect = 0.0;
            for j in 0..cfg.proj_out {
                expect += w[i * cfg.proj_out + j] * dy[j];
            }
            assert!((dx[i] - expect).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn causality_holds_for_random_sequences(
            tokens in proptest::collection::vec(0u32..5, 2..6),
            flip in 0usize..5,
            seed in 0u64..20,
        ) {
            let cfg = tiny_cfg("prefix");
            let arena = built(&cfg, seed);
            let j = flip.min(tokens.len() - 1);
            let mut mutated = tokens.clone();
            mutated[j] = (mutated[j] + 1) % cfg.vocab as u32;
            let a = tower_forward(&arena, &cfg, &tokens, true);
            let b = tower_forward(&arena, &cfg, &mutated, true);
            let dm = cfg.d_model;
            prop_assert_eq!(&a.states[..j * dm], &b.states[..j * dm]);
        }
    }
}
