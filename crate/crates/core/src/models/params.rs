use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{Decoder, Encoder, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Bag,
    /// `weight` is `d_h x (window * d_e)`, applied to the stacked window.
    Conv { weight: Array2<f64>, bias: Array1<f64> },
    BiRnn { fwd: GruParams, bwd: GruParams },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderParams {
    MaxPool,
    /// Label queries `W`, `L x d_h`.
    LaCaml { queries: Array2<f64> },
    /// `P` is `d_p x d_h`, `U` is `L x d_p`.
    LaLaat { projection: Array2<f64>, queries: Array2<f64> },
}

/// All trainable tensors. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub embedding: Array2<f64>,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    /// One readout vector per label, `L x d_h`.
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

impl GruParams {
    fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        GruParams {
            w_z: glorot(hidden, input, rng),
            w_r: glorot(hidden, input, rng),
            w_h: glorot(hidden, input, rng),
            u_z: glorot(hidden, hidden, rng),
            u_r: glorot(hidden, hidden, rng),
            u_h: glorot(hidden, hidden, rng),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        let mut push = |name: &str, data: &'a mut [f64]| out.push((format!("{prefix}.{name}"), data));
        push("w_z", slice_mut2(&mut self.w_z));
        push("w_r", slice_mut2(&mut self.w_r));
        push("w_h", slice_mut2(&mut self.w_h));
        push("u_z", slice_mut2(&mut self.u_z));
        push("u_r", slice_mut2(&mut self.u_r));
        push("u_h", slice_mut2(&mut self.u_h));
        push("b_z", slice_mut1(&mut self.b_z));
        push("b_r", slice_mut1(&mut self.b_r));
        push("b_h", slice_mut1(&mut self.b_h));
    }

    fn shapes(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
        for (name, a) in [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
        ] {
            out.push((format!("{prefix}.{name}"), a.shape().to_vec()));
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            out.push((format!("{prefix}.{name}"), b.shape().to_vec()));
        }
    }
}

fn slice_mut2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

fn slice_mut1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

impl Parameters {
    /// Embeddings uniform in ±0.1, matrices Glorot-uniform, biases zero.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d_e = config.d_e;
        let d_h = config.d_h();
        let l = config.n_labels;
        let embedding =
            Array2::from_shape_simple_fn((config.vocab_size, d_e), || rng.gen_range(-0.1..0.1));
        let encoder = match config.encoder {
            Encoder::Bag => EncoderParams::Bag,
            Encoder::Conv { window, d_h } => EncoderParams::Conv {
                weight: glorot(d_h, window * d_e, rng),
                bias: Array1::zeros(d_h),
            },
            Encoder::BiRnn { d_h } => EncoderParams::BiRnn {
                fwd: GruParams::init(d_h / 2, d_e, rng),
                bwd: GruParams::init(d_h / 2, d_e, rng),
            },
        };
        let decoder = match config.decoder {
            Decoder::MaxPool => DecoderParams::MaxPool,
            Decoder::LaCaml => DecoderParams::LaCaml {
                queries: glorot(l, d_h, rng),
            },
            Decoder::LaLaat { d_p } => DecoderParams::LaLaat {
                projection: glorot(d_p, d_h, rng),
                queries: glorot(l, d_p, rng),
            },
        };
        Ok(Parameters {
            embedding,
            encoder,
            decoder,
            out_weight: glorot(l, d_h, rng),
            out_bias: Array1::zeros(l),
        })
    }

    /// Every tensor as a named flat slice, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("embedding".into(), slice_mut2(&mut self.embedding)));
        match &mut self.encoder {
            EncoderParams::Bag => {}
            EncoderParams::Conv { weight, bias } => {
                out.push(("encoder.weight".into(), slice_mut2(weight)));
                out.push(("encoder.bias".into(), slice_mut1(bias)));
            }
            EncoderParams::BiRnn { fwd, bwd } => {
                fwd.tensors_mut("encoder.fwd", &mut out);
                bwd.tensors_mut("encoder.bwd", &mut out);
            }
        }
        match &mut self.decoder {
            DecoderParams::MaxPool => {}
            DecoderParams::LaCaml { queries } => {
                out.push(("decoder.queries".into(), slice_mut2(queries)));
            }
            DecoderParams::LaLaat { projection, queries } => {
                out.push(("decoder.projection".into(), slice_mut2(projection)));
                out.push(("decoder.queries".into(), slice_mut2(queries)));
            }
        }
        out.push(("out.weight".into(), slice_mut2(&mut self.out_weight)));
        out.push(("out.bias".into(), slice_mut1(&mut self.out_bias)));
        out
    }

    /// Flat copies of every tensor, same order as [`Parameters::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut copy = self.clone();
        copy.tensors_mut()
            .into_iter()
            .map(|(n, s)| (n, s.to_vec()))
            .collect()
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("embedding".to_string(), self.embedding.shape().to_vec())];
        match &self.encoder {
            EncoderParams::Bag => {}
            EncoderParams::Conv { weight, bias } => {
                out.push(("encoder.weight".into(), weight.shape().to_vec()));
                out.push(("encoder.bias".into(), bias.shape().to_vec()));
            }
            EncoderParams::BiRnn { fwd, bwd } => {
                fwd.shapes("encoder.fwd", &mut out);
                bwd.shapes("encoder.bwd", &mut out);
            }
        }
        match &self.decoder {
            DecoderParams::MaxPool => {}
            DecoderParams::LaCaml { queries } => {
                out.push(("decoder.queries".into(), queries.shape().to_vec()));
            }
            DecoderParams::LaLaat { projection, queries } => {
                out.push(("decoder.projection".into(), projection.shape().to_vec()));
                out.push(("decoder.queries".into(), queries.shape().to_vec()));
            }
        }
        out.push(("out.weight".into(), self.out_weight.shape().to_vec()));
        out.push(("out.bias".into(), self.out_bias.shape().to_vec()));
        out
    }

    pub fn zeros_like(&self) -> Parameters {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Zeros shaped like `self`, except for an empty embedding table. Used
    /// for per-document gradients whose embedding part is kept sparse.
    pub(crate) fn zeros_without_embedding(&self) -> Parameters {
        let d_e = self.embedding.ncols();
        let mut z = Parameters {
            embedding: Array2::zeros((0, d_e)),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            out_weight: self.out_weight.clone(),
            out_bias: self.out_bias.clone(),
        };
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Adds every tensor of `other` except the embedding table.
    pub(crate) fn add_dense(&mut self, other: &mut Parameters) {
        let src = other.tensors_mut();
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(src).skip(1) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src = other.tensors();
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(src.iter()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Reads word vectors in the text format `count dim` followed by
/// `token v1 ... v_dim` lines.
pub fn load_embeddings(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("embedding file is empty"))?
        .map_err(|e| Error::io(path, e))?;
    let mut fields = header.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(count)), Some(Ok(dim)), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(Error::Record {
            line: 1,
            message: "expected header `count dim`".into(),
        });
    };
    let mut vectors = HashMap::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap().to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| Error::Record {
            line: i + 2,
            message: e.to_string(),
        })?;
        if values.len() != dim {
            return Err(Error::Record {
                line: i + 2,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        vectors.insert(token, values);
    }
    if vectors.len() != count {
        return Err(Error::invalid(format!(
            "header announces {count} vectors, file has {}",
            vectors.len()
        )));
    }
    Ok((dim, vectors))
}
