use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

/// On-disk layout of an [`Mlp`]. Weights are nested `[layer][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDoc {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpDoc {
    fn from(m: Mlp) -> Self {
        MlpDoc::from(&m)
    }
}

impl From<&Mlp> for MlpDoc {
    fn from(m: &Mlp) -> Self {
        MlpDoc {
            layer_widths: m.layer_widths(),
            activations: m.activations(),
            dropout_rate: m.dropout_rate(),
            l2_coeff: m.l2_coeff(),
            weights: m
                .layers()
                .iter()
                .map(|l| l.weights().iter_rows().map(<[f64]>::to_vec).collect())
                .collect(),
            biases: m.layers().iter().map(|l| l.biases().to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDoc) -> Result<Self> {
        let n_layers = doc.layer_widths.len().saturating_sub(1);
        if doc.activations.len() != n_layers
            || doc.weights.len() != n_layers
            || doc.biases.len() != n_layers
        {
            return Err(Error::shape(format!(
                "model document lists {} widths but {} activations, {} weight and {} bias blocks",
                doc.layer_widths.len(),
                doc.activations.len(),
                doc.weights.len(),
                doc.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (k, ((w, b), act)) in doc
            .weights
            .into_iter()
            .zip(doc.biases)
            .zip(doc.activations)
            .enumerate()
        {
            let (fan_in, fan_out) = (doc.layer_widths[k], doc.layer_widths[k + 1]);
            let w = Matrix::from_rows(&w)?;
            if w.shape() != (fan_out, fan_in) {
                return Err(Error::shape(format!(
                    "layer {k} weights are {:?}, expected ({fan_out}, {fan_in})",
                    w.shape()
                )));
            }
            layers.push(Mlp::layer(w, b, act)?);
        }
        Mlp::from_layers(layers, doc.dropout_rate, doc.l2_coeff)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = MlpDoc::deserialize(d)?;
        Mlp::try_from(doc).map_err(serde::de::Error::custom)
    }
}

/// Writes any serializable model as pretty JSON.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
