//! 3-D convolution / transposed-convolution autoencoder and its
//! reconstruction losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv::{conv3d_shape, conv_out_extent, conv_transpose_out_extent};
use crate::tensor::graph::mean_squared_error;
use crate::tensor::{ConvParams, Graph, Scalar, Tensor, Var};

/// Architecture of the autoencoder. The decoder mirrors the encoder with
/// transposed convolutions, so the output always has the input's shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each encoder layer.
    pub encoder_channels: Vec<usize>,
    /// `(T, H, W)` stride of each encoder layer.
    pub strides: Vec<[usize; 3]>,
    pub kernel: [usize; 3],
    /// Negative slope of the hidden activations; 0 gives a plain ReLU.
    pub leaky_slope: f64,
}

impl AutoencoderConfig {
    /// Three encoder layers 1 -> 16 -> 32 -> 64 with a final sigmoid;
    /// compresses `8 x 64 x 64` to a `2 x 8 x 8` bottleneck.
    pub fn desk_scale(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels: 1,
            height,
            width,
            encoder_channels: vec![16, 32, 64],
            strides: vec![[1, 2, 2], [2, 2, 2], [2, 2, 2]],
            kernel: [3, 3, 3],
            leaky_slope: 0.2,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.frames, self.channels, self.height, self.width]
    }

    fn padding(&self) -> [usize; 3] {
        self.kernel.map(|k| k / 2)
    }

    /// Resolves every layer's geometry, failing if any stage collapses or the
    /// decoder cannot restore the input extent exactly.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.encoder_channels.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.encoder_channels.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "{} encoder channel entries but {} strides",
                self.encoder_channels.len(),
                self.strides.len()
            )));
        }
        if self.channels == 0 || self.encoder_channels.contains(&0) || self.kernel.contains(&0) {
            return Err(Error::Config("channel counts and kernel extents must be positive".into()));
        }
        let pad = self.padding();
        let mut dims = vec![[self.frames, self.height, self.width]];
        for (i, stride) in self.strides.iter().enumerate() {
            let prev = dims[i];
            let mut next = [0; 3];
            for a in 0..3 {
                next[a] = conv_out_extent(prev[a], self.kernel[a], stride[a], pad[a])
                    .ok_or_else(|| Error::Config(format!("encoder layer {i} collapses axis {a}")))?;
            }
            dims.push(next);
        }
        let mut ladder = vec![self.channels];
        ladder.extend(&self.encoder_channels);
        let depth = self.strides.len();
        let mut layers = Vec::with_capacity(2 * depth);
        for i in 0..depth {
            layers.push(LayerSpec {
                name: format!("encoder.{i}"),
                transposed: false,
                in_channels: ladder[i],
                out_channels: ladder[i + 1],
                params: ConvParams::new(self.strides[i], pad),
            });
        }
        for j in 0..depth {
            let i = depth - 1 - j;
            let (from, to) = (dims[i + 1], dims[i]);
            let stride = self.strides[i];
            let mut output_padding = [0; 3];
            for a in 0..3 {
                let base = conv_transpose_out_extent(from[a], self.kernel[a], stride[a], pad[a], 0)
                    .unwrap_or(0);
                let extra = to[a].checked_sub(base).filter(|&e| e < stride[a]).ok_or_else(|| {
                    Error::Config(format!("decoder layer {j} cannot restore extent {} on axis {a}", to[a]))
                })?;
                output_padding[a] = extra;
            }
            layers.push(LayerSpec {
                name: format!("decoder.{j}"),
                transposed: true,
                in_channels: ladder[i + 1],
                out_channels: ladder[i],
                params: ConvParams::new(stride, pad).with_output_padding(output_padding),
            });
        }
        Ok(layers)
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    pub fn parameter_signature(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let [kt, kh, kw] = self.kernel;
        let mut sig = Vec::new();
        for layer in self.layers()? {
            let weight = if layer.transposed {
                vec![layer.in_channels, layer.out_channels, kt, kh, kw]
            } else {
                vec![layer.out_channels, layer.in_channels, kt, kh, kw]
            };
            sig.push((format!("{}.weight", layer.name), weight));
            sig.push((format!("{}.bias", layer.name), vec![layer.out_channels]));
        }
        Ok(sig)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .parameter_signature()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub transposed: bool,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: ConvParams,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| t.shape().to_vec()))
            .collect()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Autoencoder<F = f32> {
    config: AutoencoderConfig,
    layers: Vec<LayerSpec>,
    params: ModelParams<F>,
}

impl<F: Scalar> Autoencoder<F> {
    /// Builds a model with fan-in scaled uniform weights and zero biases.
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        let layers = config.layers()?;
        let signature = config.parameter_signature()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = config.leaky_slope;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let kvol: usize = config.kernel.iter().product();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (layer, pair) in layers.iter().zip(signature.chunks_exact(2)) {
            let bound = gain * (3.0 / (layer.in_channels * kvol) as f64).sqrt();
            let (wname, wshape) = &pair[0];
            let len = wshape.iter().product();
            let data = (0..len)
                .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            names.push(wname.clone());
            tensors.push(Tensor::new(wshape.clone(), data)?);
            let (bname, bshape) = &pair[1];
            names.push(bname.clone());
            tensors.push(Tensor::zeros(bshape.clone()));
        }
        Ok(Self {
            config,
            layers,
            params: ModelParams { names, tensors },
        })
    }

    /// Wraps existing parameters after checking them against the
    /// architecture's shape signature.
    pub fn from_params(config: AutoencoderConfig, params: ModelParams<F>) -> Result<Self> {
        let layers = config.layers()?;
        let expected = config.parameter_signature()?;
        let found = params.signature();
        if expected != found {
            let detail = expected
                .iter()
                .zip(&found)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| {
                    format!("expected {} tensors, found {}", expected.len(), found.len())
                });
            return Err(Error::ShapeSignature(detail));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<F> {
        self.params
    }

    /// Records the parameters on `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.parameter(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect()
    }

    /// Records the reconstruction of `input` (`[N,T,C,H,W]`).
    pub fn forward(&self, graph: &mut Graph<F>, params: &[Var], input: Var) -> Result<Var> {
        let shape = graph.value(input).shape();
        let expected = self.config.input_shape(shape.first().copied().unwrap_or(0));
        if shape != expected.as_slice() {
            return Err(Error::shape(
                "autoencoder",
                format!("input {shape:?} does not match configured {expected:?}"),
            ));
        }
        let slope = F::from_f64_lossy(self.config.leaky_slope);
        let last = self.layers.len() - 1;
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = (params[2 * i], params[2 * i + 1]);
            x = if layer.transposed {
                graph.conv_transpose3d(x, w, layer.params)?
            } else {
                graph.conv3d(x, w, layer.params)?
            };
            x = graph.channel_bias(x, b)?;
            x = if i == last {
                graph.sigmoid(x)
            } else {
                graph.leaky_relu(x, slope)
            };
        }
        Ok(x)
    }

    /// Inference-only reconstruction.
    pub fn reconstruct(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let mut graph = Graph::new();
        let params = self.bind(&mut graph, false);
        let x = graph.constant(input.clone());
        let y = self.forward(&mut graph, &params, x)?;
        Ok(graph.value(y).clone())
    }

    /// Shape of the bottleneck code for a batch of `batch` sequences.
    pub fn latent_shape(&self, batch: usize) -> Result<Vec<usize>> {
        let [kt, kh, kw] = self.config.kernel;
        let mut shape = self.config.input_shape(batch);
        for layer in self.layers.iter().filter(|l| !l.transposed) {
            let k = [layer.out_channels, layer.in_channels, kt, kh, kw];
            shape = conv3d_shape(&shape, &k, &layer.params)?;
        }
        Ok(shape)
    }
}

/// Reconstruction loss for normal inputs: mean squared error between the
/// reconstruction and the input over `T x C x H x W` (and the batch).
pub fn loss_normal<F: Scalar>(reconstruction: &Tensor<F>, normal: &Tensor<F>) -> Result<F> {
    crate::tensor::ensure_same_shape("loss_normal", reconstruction.shape(), normal.shape())?;
    Ok(mean_squared_error(reconstruction.data(), normal.data()))
}

/// Reconstruction loss for pseudo-anomalous inputs. The target is the normal
/// sequence the pseudo anomaly was derived from, not the perturbed input.
pub fn loss_pseudo<F: Scalar>(reconstruction_of_pseudo: &Tensor<F>, normal: &Tensor<F>) -> Result<F> {
    crate::tensor::ensure_same_shape("loss_pseudo", reconstruction_of_pseudo.shape(), normal.shape())?;
    Ok(mean_squared_error(reconstruction_of_pseudo.data(), normal.data()))
}
