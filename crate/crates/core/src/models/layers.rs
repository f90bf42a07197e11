use rand::Rng;

use crate::tensor::{fan_in_uniform, Bound, ParamStore, Scalar, Tape, Tensor, Var};

use super::Result;

/// Initial slope of every parametric rectifier.
pub const PRELU_INIT: f64 = 0.25;

/// Dense stack `in -> hidden... -> out` with PReLU between layers and a
/// linear output. Parameters are `{prefix}.w{i}`, `{prefix}.b{i}` and, for
/// hidden layers, `{prefix}.a{i}`. The output-layer bias is optional.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub output_bias: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Mlp {
            prefix: prefix.into(),
            widths,
            output_bias: true,
        }
    }

    pub fn without_output_bias(mut self) -> Self {
        self.output_bias = false;
        self
    }

    fn has_bias(&self, layer: usize) -> bool {
        self.output_bias || layer + 1 < self.layers()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn init<F: Scalar, R: Rng>(&self, params: &mut ParamStore<F>, rng: &mut R) {
        for i in 0..self.layers() {
            let (fi, fo) = (self.widths[i], self.widths[i + 1]);
            params.insert(format!("{}.w{i}", self.prefix), fan_in_uniform(fi, fo, rng));
            if self.has_bias(i) {
                params.insert(format!("{}.b{i}", self.prefix), Tensor::zeros([fo]));
            }
            if i + 1 < self.layers() {
                params.insert(format!("{}.a{i}", self.prefix), Tensor::full([fo], F::of(PRELU_INIT)));
            }
        }
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, mut x: Var) -> Result<Var> {
        for i in 0..self.layers() {
            let w = p.var(&format!("{}.w{i}", self.prefix))?;
            x = tape.matmul(x, w)?;
            if self.has_bias(i) {
                let b = p.var(&format!("{}.b{i}", self.prefix))?;
                x = tape.add(x, b)?;
            }
            if i + 1 < self.layers() {
                let a = p.var(&format!("{}.a{i}", self.prefix))?;
                x = tape.prelu(x, a)?;
            }
        }
        Ok(x)
    }
}

/// Scores each row of `keys` against the aligned row of `queries` through
/// an MLP over `[key, key - query, key * query, query]`.
#[derive(Clone, Debug)]
pub struct ActivationUnit {
    pub mlp: Mlp,
}

impl ActivationUnit {
    pub fn new(prefix: impl Into<String>, dim: usize, hidden: &[usize]) -> Self {
        ActivationUnit {
            mlp: Mlp::new(prefix, 4 * dim, hidden, 1),
        }
    }

    /// For scores that feed a softmax, where a constant shift is invisible:
    /// the output bias would never receive gradient, so it is left out.
    pub fn normalized(prefix: impl Into<String>, dim: usize, hidden: &[usize]) -> Self {
        ActivationUnit {
            mlp: Mlp::new(prefix, 4 * dim, hidden, 1).without_output_bias(),
        }
    }

    pub fn init<F: Scalar, R: Rng>(&self, params: &mut ParamStore<F>, rng: &mut R) {
        self.mlp.init(params, rng);
    }

    /// `keys`, `queries`: `[n, d]`. Returns raw scores `[n, 1]`.
    pub fn score<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, keys: Var, queries: Var) -> Result<Var> {
        let diff = tape.sub(keys, queries)?;
        let prod = tape.mul(keys, queries)?;
        let feat = tape.concat_last(&[keys, diff, prod, queries])?;
        self.mlp.forward(tape, p, feat)
    }
}

/// Gated recurrent unit with hidden size equal to its input size.
#[derive(Clone, Debug)]
pub struct Gru {
    pub prefix: String,
    pub dim: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl Gru {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        Gru {
            prefix: prefix.into(),
            dim,
        }
    }

    pub fn init<F: Scalar, R: Rng>(&self, params: &mut ParamStore<F>, rng: &mut R) {
        let d = self.dim;
        for g in GATES {
            params.insert(format!("{}.w_{g}", self.prefix), fan_in_uniform(d, d, rng));
            params.insert(format!("{}.u_{g}", self.prefix), fan_in_uniform(d, d, rng));
            params.insert(format!("{}.b_{g}", self.prefix), Tensor::zeros([d]));
        }
    }

    /// One step for a batch: `x`, `h`: `[B, d]`; `mask`: `[B, 1]` of 0/1.
    /// Rows with mask 0 keep `h`.
    pub fn step<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, x: Var, h: Var, mask: Var) -> Result<Var> {
        let gate = |tape: &mut Tape<F>, g: &str, h_in: Var| -> Result<Var> {
            let w = p.var(&format!("{}.w_{g}", self.prefix))?;
            let u = p.var(&format!("{}.u_{g}", self.prefix))?;
            let b = p.var(&format!("{}.b_{g}", self.prefix))?;
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h_in, u)?;
            let s = tape.add(xw, hu)?;
            Ok(tape.add(s, b)?)
        };
        let z_pre = gate(tape, "z", h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, "r", h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let n_pre = gate(tape, "n", rh)?;
        let n = tape.tanh(n_pre)?;
        // (1 - z) * n + z * h == n + z * (h - n)
        let hn = tape.sub(h, n)?;
        let zhn = tape.mul(z, hn)?;
        let next = tape.add(n, zhn)?;
        let delta = tape.sub(next, h)?;
        let gated = tape.mul(mask, delta)?;
        Ok(tape.add(h, gated)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        crate::tensor::uniform(shape, 1.0, rng)
    }

    #[test]
    fn zero_output_layer_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let au = ActivationUnit::new("au", 3, &[5]);
        let mut params = ParamStore::<f64>::new();
        au.init(&mut params, &mut rng);
        params.get_mut("au.w1").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let k = tape.constant(rand_tensor(&[4, 3], &mut rng));
        let q = tape.constant(rand_tensor(&[4, 3], &mut rng));
        let s = au.score(&mut tape, &b, k, q).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_scores_match_single_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let au = ActivationUnit::new("au", 4, &[6]);
        let mut params = ParamStore::<f32>::new();
        au.init(&mut params, &mut rng);
        let keys: Tensor<f32> = crate::tensor::uniform(&[5, 4], 1.0, &mut rng);
        let queries: Tensor<f32> = crate::tensor::uniform(&[5, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let k = tape.constant(keys.clone());
        let q = tape.constant(queries.clone());
        let all = au.score(&mut tape, &b, k, q).unwrap();
        let all = tape.value(all).data().to_vec();
        for (r, want) in all.iter().enumerate() {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let k = tape.constant(Tensor::new([1, 4], keys.row(r).to_vec()).unwrap());
            let q = tape.constant(Tensor::new([1, 4], queries.row(r).to_vec()).unwrap());
            let one = au.score(&mut tape, &b, k, q).unwrap();
            assert!((tape.item(one) as f32 - want).abs() <= 1e-6);
        }
    }

    #[test]
    fn normalized_unit_has_no_output_bias() {
        let mut params = ParamStore::<f64>::new();
        ActivationUnit::normalized("au", 2, &[4]).init(&mut params, &mut ChaCha8Rng::seed_from_u64(1));
        let mut names = params.names().to_vec();
        names.sort();
        assert_eq!(names, ["au.a0", "au.b0", "au.w0", "au.w1"]);

        // Same draws as the biased unit, whose output bias starts at zero.
        let mut biased = ParamStore::<f64>::new();
        ActivationUnit::new("au", 2, &[4]).init(&mut biased, &mut ChaCha8Rng::seed_from_u64(1));
        let score = |au: &ActivationUnit, p: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let b = p.bind(&mut tape);
            let k = tape.constant(Tensor::new([1, 2], vec![0.4, -0.1]).unwrap());
            let q = tape.constant(Tensor::new([1, 2], vec![0.2, 0.3]).unwrap());
            let s = au.score(&mut tape, &b, k, q).unwrap();
            tape.item(s)
        };
        assert_eq!(
            score(&ActivationUnit::normalized("au", 2, &[4]), &params),
            score(&ActivationUnit::new("au", 2, &[4]), &biased)
        );
    }

    /// Hand-rolled d=2 forward: 8 inputs -> 4 PReLU units -> 1.
    #[test]
    fn matches_manual_forward_d2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let au = ActivationUnit::new("au", 2, &[4]);
        let mut params = ParamStore::<f64>::new();
        au.init(&mut params, &mut rng);
        // Non-trivial biases and slopes.
        for name in ["au.b0", "au.b1", "au.a0"] {
            let t = params.get_mut(name).unwrap();
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let key = [0.3, -0.7];
        let query = [-0.2, 0.9];

        let feat = [
            key[0],
            key[1],
            key[0] - query[0],
            key[1] - query[1],
            key[0] * query[0],
            key[1] * query[1],
            query[0],
            query[1],
        ];
        let w0 = params.get("au.w0").unwrap().data().to_vec();
        let b0 = params.get("au.b0").unwrap().data().to_vec();
        let a0 = params.get("au.a0").unwrap().data().to_vec();
        let w1 = params.get("au.w1").unwrap().data().to_vec();
        let b1 = params.get("au.b1").unwrap().data()[0];
        let mut expected = b1;
        for j in 0..4 {
            let mut h = b0[j];
            for (i, f) in feat.iter().enumerate() {
                h += f * w0[i * 4 + j];
            }
            let h = if h > 0.0 { h } else { a0[j] * h };
            expected += h * w1[j];
        }

        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let k = tape.constant(Tensor::new([1, 2], key.to_vec()).unwrap());
        let q = tape.constant(Tensor::new([1, 2], query.to_vec()).unwrap());
        let s = au.score(&mut tape, &b, k, q).unwrap();
        assert!((tape.item(s) - expected).abs() < 1e-12);
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn single_step_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 3;
        let gru = Gru::new("gru", d);
        let mut params = ParamStore::<f64>::new();
        gru.init(&mut params, &mut rng);
        for g in GATES {
            for v in params.get_mut(&format!("gru.b_{g}")).unwrap().data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h0 = vec![0.0; d];

        let get = |n: &str| params.get(&format!("gru.{n}")).unwrap().data().to_vec();
        let affine = |g: &str, h: &[f64]| -> Vec<f64> {
            let (w, u, b) = (get(&format!("w_{g}")), get(&format!("u_{g}")), get(&format!("b_{g}")));
            (0..d)
                .map(|j| {
                    b[j] + (0..d).map(|i| x[i] * w[i * d + j]).sum::<f64>()
                        + (0..d).map(|i| h[i] * u[i * d + j]).sum::<f64>()
                })
                .collect()
        };
        let z: Vec<f64> = affine("z", &h0).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = affine("r", &h0).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(&h0).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = affine("n", &rh).into_iter().map(f64::tanh).collect();
        let expected: Vec<f64> = (0..d).map(|j| (1.0 - z[j]) * n[j] + z[j] * h0[j]).collect();

        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let xv = tape.constant(Tensor::new([1, d], x.clone()).unwrap());
        let hv = tape.constant(Tensor::zeros([1, d]));
        let m = tape.constant(Tensor::full([1, 1], 1.0));
        let h1 = gru.step(&mut tape, &b, xv, hv, m).unwrap();
        for (a, e) in tape.value(h1).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }

        let m0 = tape.constant(Tensor::full([1, 1], 0.0));
        let hv2 = tape.constant(Tensor::new([1, d], vec![0.5; d]).unwrap());
        let kept = gru.step(&mut tape, &b, xv, hv2, m0).unwrap();
        assert_eq!(tape.value(kept).data(), &[0.5; 3]);
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        let gru = Gru::new("gru", 2);
        let mut params = ParamStore::<f64>::new();
        gru.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
        for t in params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(Tensor::new([1, 2], vec![3.0, -1.0]).unwrap());
        let h = tape.constant(Tensor::zeros([1, 2]));
        let m = tape.constant(Tensor::full([1, 1], 1.0));
        let h1 = gru.step(&mut tape, &b, x, h, m).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0, 0.0]);
    }
}
