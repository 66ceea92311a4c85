//! Plain-loop reference forward passes evaluated in double-double
//! precision. They share nothing with the graph implementation except the
//! parameter naming convention and inference-mode semantics.

use evmscan::model::{LstmConfig, ModelConfig, ParamSet, TransformerConfig};

use super::dd::Dd;

/// Parameters lifted to double-double, with one entry optionally shifted.
pub struct DdParams {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<Dd>>,
}

impl DdParams {
    pub fn new(params: &ParamSet, shift: Option<(usize, usize, Dd)>) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut values = Vec::new();
        for (name, t) in params.iter() {
            names.push(name.to_string());
            shapes.push(t.shape().to_vec());
            values.push(t.data().iter().map(|&v| Dd::new(v)).collect::<Vec<_>>());
        }
        if let Some((id, k, delta)) = shift {
            values[id][k] = values[id][k] + delta;
        }
        Self {
            names,
            shapes,
            values,
        }
    }

    fn get(&self, name: &str) -> (&[Dd], &[usize]) {
        let i = self.names.iter().position(|n| n == name).unwrap();
        (&self.values[i], &self.shapes[i])
    }

    /// Row-major matrix as nested rows.
    fn matrix(&self, name: &str) -> Vec<Vec<Dd>> {
        let (v, s) = self.get(name);
        v.chunks(s[1]).map(|r| r.to_vec()).collect()
    }

    fn vector(&self, name: &str) -> Vec<Dd> {
        self.get(name).0.to_vec()
    }
}

fn matmul(x: &[Vec<Dd>], w: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let cols = w[0].len();
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(w).map(|(&a, wr)| a * wr[j]).sum())
                .collect()
        })
        .collect()
}

fn add_bias(x: &mut [Vec<Dd>], b: &[Dd]) {
    for row in x.iter_mut() {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v = *v + bb;
        }
    }
}

fn softmax(xs: &[Dd]) -> Vec<Dd> {
    let max = xs.iter().copied().fold(xs[0], Dd::max);
    let e: Vec<Dd> = xs.iter().map(|&v| (v - max).exp()).collect();
    let total: Dd = e.iter().copied().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn layer_norm(x: &[Vec<Dd>], gain: &[Dd], shift: &[Dd]) -> Vec<Vec<Dd>> {
    let eps = Dd::new(evmscan::model::LAYER_NORM_EPS);
    x.iter()
        .map(|row| {
            let n = Dd::new(row.len() as f64);
            let mean = row.iter().copied().sum::<Dd>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Dd>() / n;
            let inv = Dd::ONE / (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, &v)| (v - mean) * inv * gain[j] + shift[j])
                .collect()
        })
        .collect()
}

fn relu(x: Dd) -> Dd {
    if x.hi > 0.0 {
        x
    } else {
        Dd::ZERO
    }
}

fn head(p: &DdParams, pooled: &[Dd]) -> Vec<Dd> {
    let mut h = matmul(&[pooled.to_vec()], &p.matrix("hidden.weight"));
    add_bias(&mut h, &p.vector("hidden.bias"));
    let h: Vec<Dd> = h[0].iter().map(|&v| relu(v)).collect();
    let mut logits = matmul(&[h], &p.matrix("output.weight"));
    add_bias(&mut logits, &p.vector("output.bias"));
    softmax(&logits[0])
}

pub fn transformer_probs(p: &DdParams, cfg: &TransformerConfig, ids: &[usize]) -> Vec<Dd> {
    let d = cfg.embedding_dim;
    let live: Vec<bool> = ids.iter().map(|&i| i != 0).collect();
    let emb = p.matrix("embedding");
    let x: Vec<Vec<Dd>> = ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            (0..d)
                .map(|j| {
                    let i = (j / 2) as f64;
                    let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
                    let pe = if j % 2 == 0 { angle.sin() } else { angle.cos() };
                    emb[id][j] + Dd::new(pe)
                })
                .collect()
        })
        .collect();

    let q = matmul(&x, &p.matrix("attention.query"));
    let k = matmul(&x, &p.matrix("attention.key"));
    let v = matmul(&x, &p.matrix("attention.value"));
    let dh = cfg.head_size / cfg.num_heads;
    let inv_sqrt = Dd::ONE / Dd::new(dh as f64).sqrt();
    let l = ids.len();
    let mut joined = vec![vec![Dd::ZERO; cfg.head_size]; l];
    for h in 0..cfg.num_heads {
        for i in 0..l {
            let keys: Vec<usize> = (0..l).filter(|&j| live[j]).collect();
            let scores: Vec<Dd> = keys
                .iter()
                .map(|&j| {
                    (0..dh)
                        .map(|t| q[i][h * dh + t] * k[j][h * dh + t])
                        .sum::<Dd>()
                        * inv_sqrt
                })
                .collect();
            let w = softmax(&scores);
            for t in 0..dh {
                joined[i][h * dh + t] = keys
                    .iter()
                    .zip(&w)
                    .map(|(&j, &wj)| wj * v[j][h * dh + t])
                    .sum();
            }
        }
    }
    let attn = matmul(&joined, &p.matrix("attention.output"));
    let res: Vec<Vec<Dd>> = x
        .iter()
        .zip(&attn)
        .map(|(a, b)| a.iter().zip(b).map(|(&u, &w)| u + w).collect())
        .collect();
    let y = layer_norm(&res, &p.vector("norm1.gain"), &p.vector("norm1.shift"));

    let mut f = matmul(&y, &p.matrix("ffn.w1"));
    add_bias(&mut f, &p.vector("ffn.b1"));
    for row in f.iter_mut() {
        for v in row.iter_mut() {
            *v = relu(*v);
        }
    }
    let mut f = matmul(&f, &p.matrix("ffn.w2"));
    add_bias(&mut f, &p.vector("ffn.b2"));
    let res: Vec<Vec<Dd>> = y
        .iter()
        .zip(&f)
        .map(|(a, b)| a.iter().zip(b).map(|(&u, &w)| u + w).collect())
        .collect();
    let enc = layer_norm(&res, &p.vector("norm2.gain"), &p.vector("norm2.shift"));

    let proj = matmul(&enc, &p.matrix("pooling.projection"));
    let u = p.vector("pooling.context");
    let rows: Vec<usize> = (0..l).filter(|&i| live[i]).collect();
    let scores: Vec<Dd> = rows
        .iter()
        .map(|&i| proj[i].iter().zip(&u).map(|(&a, &b)| a.tanh() * b).sum())
        .collect();
    let w = softmax(&scores);
    let pooled: Vec<Dd> = (0..d)
        .map(|j| rows.iter().zip(&w).map(|(&i, &wi)| wi * enc[i][j]).sum())
        .collect();
    head(p, &pooled)
}

pub fn lstm_probs(p: &DdParams, cfg: &LstmConfig, ids: &[usize]) -> Vec<Dd> {
    let hs = cfg.hidden_size;
    let emb = p.matrix("embedding");
    let w_in = p.matrix("lstm.input");
    let w_rec = p.matrix("lstm.recurrent");
    let bias = p.vector("lstm.bias");
    let mut h = vec![Dd::ZERO; hs];
    let mut c = vec![Dd::ZERO; hs];
    for &id in ids.iter().filter(|&&id| id != 0) {
        let x = &emb[id];
        let z: Vec<Dd> = (0..4 * hs)
            .map(|j| {
                let a: Dd = x.iter().zip(&w_in).map(|(&xv, row)| xv * row[j]).sum();
                let b: Dd = h.iter().zip(&w_rec).map(|(&hv, row)| hv * row[j]).sum();
                a + b + bias[j]
            })
            .collect();
        for j in 0..hs {
            let i = z[j].sigmoid();
            let f = z[hs + j].sigmoid();
            let g = z[2 * hs + j].tanh();
            let o = z[3 * hs + j].sigmoid();
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }
    head(p, &h)
}

pub fn probs(p: &DdParams, config: &ModelConfig, ids: &[usize]) -> Vec<Dd> {
    match config {
        ModelConfig::Transformer(c) => transformer_probs(p, c, ids),
        ModelConfig::Lstm(c) => lstm_probs(p, c, ids),
    }
}

/// Binary cross-entropy on the class-1 probability.
pub fn bce(p: &DdParams, config: &ModelConfig, ids: &[usize], target: f64) -> Dd {
    let p1 = probs(p, config, ids)[1];
    let y = Dd::new(target);
    -(y * p1.ln() + (Dd::ONE - y) * (Dd::ONE - p1).ln())
}
