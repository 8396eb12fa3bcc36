//! Run manifests: network shape, hardware overrides, tensor sources and
//! error configuration.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rnnfast_core::error_model::ErrorConfig;
use rnnfast_core::fixedpoint::{decode_le, FRAC_BITS};
use rnnfast_core::lstm::LayerWeights;
use rnnfast_core::{FixedQ8_8, HardwareConfig, NetworkSpec};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub description: Option<String>,
    pub network: NetworkSpec,
    #[serde(default)]
    pub hardware: HardwareConfig,
    pub weights: TensorSource,
    pub inputs: TensorSource,
    #[serde(default)]
    pub error: ErrorConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
pub enum Encoding {
    #[default]
    #[serde(rename = "raw-q8.8-le")]
    RawQ88Le,
    #[serde(rename = "json-real")]
    JsonReal,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Generate {
    pub seed: u64,
    /// Values are drawn uniformly from `[-scale, scale]`.
    pub scale: Option<f64>,
}

/// A tensor either read from a file or drawn from a seeded generator.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSource {
    pub path: Option<PathBuf>,
    pub layout: Option<String>,
    #[serde(default)]
    pub encoding: Encoding,
    pub generate: Option<Generate>,
}

/// Values as stored: fixed point for raw files and generators, reals for JSON.
#[derive(Clone, Debug)]
pub enum Values {
    Fixed(Vec<FixedQ8_8>),
    Real(Vec<f64>),
}

impl Values {
    fn len(&self) -> usize {
        match self {
            Self::Fixed(v) => v.len(),
            Self::Real(v) => v.len(),
        }
    }

    pub fn fixed(&self) -> Vec<FixedQ8_8> {
        match self {
            Self::Fixed(v) => v.clone(),
            Self::Real(v) => v.iter().map(|&x| FixedQ8_8::from_real(x)).collect(),
        }
    }

    pub fn real(&self) -> Vec<f64> {
        match self {
            Self::Fixed(v) => v.iter().map(|x| x.to_real()).collect(),
            Self::Real(v) => v.clone(),
        }
    }
}

/// Manifest with its tensors resolved and shape-checked.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub manifest: Manifest,
    pub weights: Values,
    pub inputs: Values,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Validation { field: field.into(), message: message.into() }
}

fn io_err(path: &Path, source: io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

pub fn parse(text: &str) -> Result<Manifest, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        invalid(if field == "." { "manifest".to_string() } else { field }, e.inner().to_string())
    })
}

/// Number of weight values the network declares, layer after layer.
pub fn weight_count(spec: &NetworkSpec) -> usize {
    spec.layers.iter().map(|l| l.cell_type.gate_count() * l.neurons * l.weights_per_gate()).sum()
}

impl Manifest {
    /// Parse only; tensors are not touched.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.network.validate()?;
        self.hardware.validate()?;
        self.error.validate()?;
        if self.network.layers.is_empty() {
            return Err(invalid("network.layers", "must contain at least one layer"));
        }
        Ok(())
    }

    /// Read or generate the tensors, relative paths taken from `base`.
    pub fn resolve(self, base: &Path) -> Result<Loaded, CliError> {
        self.validate()?;
        let n_weights = weight_count(&self.network);
        let n_inputs = self.network.timesteps * self.network.inputs();
        let weights = self.weights.read("weights", "gate-major", n_weights, 0.5, base, |rng| {
            self.network
                .layers
                .iter()
                .flat_map(|l| LayerWeights::random(l.cell_type, l.inputs, l.neurons, self.weights.scale(0.5), rng).flatten())
                .collect()
        })?;
        let inputs = self.inputs.read("inputs", "timestep-major", n_inputs, 1.0, base, |rng| {
            let bound = raw_bound(self.inputs.scale(1.0));
            (0..n_inputs).map(|_| FixedQ8_8::from_raw(rng.random_range(-bound..=bound))).collect()
        })?;
        Ok(Loaded { manifest: self, weights, inputs })
    }
}

fn raw_bound(scale: f64) -> i16 {
    (scale * f64::from(1u32 << FRAC_BITS)).round().clamp(0.0, f64::from(i16::MAX)) as i16
}

impl TensorSource {
    fn scale(&self, default: f64) -> f64 {
        self.generate.and_then(|g| g.scale).unwrap_or(default)
    }

    fn read(
        &self,
        field: &str,
        layout: &str,
        expected: usize,
        default_scale: f64,
        base: &Path,
        generate: impl FnOnce(&mut ChaCha8Rng) -> Vec<FixedQ8_8>,
    ) -> Result<Values, CliError> {
        if let Some(l) = &self.layout {
            if l != layout {
                return Err(invalid(format!("{field}.layout"), format!("only \"{layout}\" is supported")));
            }
        }
        let values = match (&self.path, &self.generate) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(invalid(field, "exactly one of \"path\" and \"generate\" must be given"));
            }
            (None, Some(g)) => {
                let scale = g.scale.unwrap_or(default_scale);
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(invalid(format!("{field}.generate.scale"), "must be finite and non-negative"));
                }
                Values::Fixed(generate(&mut ChaCha8Rng::seed_from_u64(g.seed)))
            }
            (Some(p), None) => {
                let path = base.join(p);
                if !path.is_file() {
                    return Err(invalid(format!("{field}.path"), format!("{} does not exist", path.display())));
                }
                let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                match self.encoding {
                    Encoding::RawQ88Le => {
                        if bytes.len() != 2 * expected {
                            return Err(invalid(
                                format!("{field}.path"),
                                format!("expected {} bytes ({expected} Q8.8 words), found {}", 2 * expected, bytes.len()),
                            ));
                        }
                        Values::Fixed(decode_le(&bytes).expect("even length checked"))
                    }
                    Encoding::JsonReal => {
                        let v: Vec<f64> = serde_json::from_slice(&bytes)
                            .map_err(|e| invalid(format!("{field}.path"), format!("not a JSON array of numbers: {e}")))?;
                        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                            return Err(invalid(format!("{field}.path"), format!("entry {i} is not finite")));
                        }
                        Values::Real(v)
                    }
                }
            }
        };
        if values.len() != expected {
            return Err(invalid(field, format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }
}

impl Loaded {
    pub fn fixed_weights(&self) -> Vec<LayerWeights<FixedQ8_8>> {
        split_layers(&self.manifest.network, &self.weights.fixed())
    }

    pub fn real_weights(&self) -> Vec<LayerWeights<f64>> {
        split_layers(&self.manifest.network, &self.weights.real())
    }

    pub fn fixed_inputs(&self) -> Vec<Vec<FixedQ8_8>> {
        chunk(&self.inputs.fixed(), self.manifest.network.inputs())
    }

    pub fn real_inputs(&self) -> Vec<Vec<f64>> {
        chunk(&self.inputs.real(), self.manifest.network.inputs())
    }
}

fn chunk<T: Clone>(v: &[T], width: usize) -> Vec<Vec<T>> {
    v.chunks_exact(width.max(1)).map(<[T]>::to_vec).collect()
}

fn split_layers<T: Copy>(spec: &NetworkSpec, flat: &[T]) -> Vec<LayerWeights<T>> {
    let mut at = 0;
    spec.layers
        .iter()
        .map(|l| {
            let n = l.cell_type.gate_count() * l.neurons * l.weights_per_gate();
            let w = LayerWeights::unflatten(l.cell_type, l.inputs, l.neurons, &flat[at..at + n])
                .expect("weight count checked on load");
            at += n;
            w
        })
        .collect()
}
