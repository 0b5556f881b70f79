use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::nn::{
    sigmoid_backward, sigmoid_map, silu, silu_backward, upsample2x, upsample2x_backward, Conv2d,
    Tensor3,
};
use super::{
    draw_noise, estimate_statistics, quantize, sample_with_noise, Codebook, GeneratorConfig,
    LatentGrid, SamplingMode, VarianceGrid, VarianceSource,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Encoder convolutions, decoder convolutions and the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub encoder: Vec<Conv2d>,
    pub decoder: Vec<Conv2d>,
    pub codebook: Codebook,
}

impl GeneratorParams {
    fn init(config: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        // image -> hidden[0] -> ... -> latent, each a 4x4 stride-2 conv
        let mut widths = vec![config.channels];
        widths.extend(&config.hidden);
        widths.push(config.latent_dim);
        let encoder = widths
            .windows(2)
            .map(|w| Conv2d::new(w[0], w[1], 4, 2, 1, rng))
            .collect();
        // latent -> ... -> image, each a nearest 2x upsample then 3x3 conv
        let rev: Vec<usize> = widths.iter().rev().copied().collect();
        let decoder = rev
            .windows(2)
            .map(|w| Conv2d::new(w[0], w[1], 3, 1, 1, rng))
            .collect();
        let codebook = Codebook::random(config.codebook_size, config.latent_dim, rng);
        Self {
            encoder,
            decoder,
            codebook,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(Conv2d::zeros_like).collect(),
            decoder: self.decoder.iter().map(Conv2d::zeros_like).collect(),
            codebook: Codebook::from_rows(
                self.codebook.size(),
                self.codebook.dim(),
                vec![0.0; self.codebook.as_slice().len()],
            )
            .expect("same shape"),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), c.weight.as_slice()));
            out.push((format!("encoder.{i}.bias"), c.bias.as_slice()));
        }
        for (i, c) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.weight"), c.weight.as_slice()));
            out.push((format!("decoder.{i}.bias"), c.bias.as_slice()));
        }
        out.push(("codebook".to_string(), self.codebook.as_slice()));
        out
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(c.weight.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        out.push(self.codebook.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }
}

fn accumulate_convs(dst: &mut [Conv2d], src: &[Conv2d]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.weight.iter_mut().zip(&s.weight) {
            *a += b;
        }
        for (a, b) in d.bias.iter_mut().zip(&s.bias) {
            *a += b;
        }
    }
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl TrainState {
    fn new(params: &GeneratorParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub vq: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
}

struct EncoderTrace {
    inputs: Vec<Tensor3>,
    pre: Vec<Tensor3>,
}

struct DecoderTrace {
    inputs: Vec<Tensor3>,
    pre: Vec<Tensor3>,
    out: Tensor3,
}

/// Per-augmented-image forward state kept for the encoder backward pass.
struct ImagePass {
    latent: LatentGrid,
    quantized: LatentGrid,
    trace: EncoderTrace,
    recon_loss: f64,
    codebook_sq: f64,
    /// `d recon_loss / d quantized`, routed straight through to the encoder.
    d_quantized: Vec<f64>,
    decoder_grads: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: GeneratorParams,
    train: TrainState,
}

impl Generator {
    /// Randomly initialized from `config.seed`.
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = GeneratorParams::init(&config, &mut rng);
        let train = TrainState::new(&params);
        Ok(Self {
            config,
            params,
            train,
        })
    }

    pub fn from_parts(
        config: GeneratorConfig,
        params: GeneratorParams,
        train: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        let expected = Generator::new(config.clone())?;
        let shapes = |p: &GeneratorParams| -> Vec<(String, usize)> {
            p.tensors().into_iter().map(|(n, t)| (n, t.len())).collect()
        };
        if shapes(&expected.params) != shapes(&params) {
            return Err(Error::ShapeMismatch(
                "parameter tensors do not match the configuration".into(),
            ));
        }
        if train.first_moment.len() != params.tensors().len()
            || train.second_moment.len() != params.tensors().len()
        {
            return Err(Error::ShapeMismatch("optimizer state does not match".into()));
        }
        Ok(Self {
            config,
            params,
            train,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut GeneratorConfig {
        &mut self.config
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GeneratorParams {
        &mut self.params
    }

    pub fn train_state(&self) -> &TrainState {
        &self.train
    }

    pub fn codebook(&self) -> &Codebook {
        &self.params.codebook
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let res = self.config.resolution;
        if image.shape() != (res, res, self.config.channels) {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {res}x{res}x{}, got {:?}",
                self.config.channels,
                image.shape()
            )));
        }
        Ok(())
    }

    fn check_latents(&self, latents: &LatentGrid) -> Result<()> {
        if latents.positions() != self.config.positions() || latents.dim() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {}x{} latents, got {}x{}",
                self.config.positions(),
                self.config.latent_dim,
                latents.positions(),
                latents.dim()
            )));
        }
        Ok(())
    }

    fn tensor_to_grid(&self, t: &Tensor3) -> LatentGrid {
        let g = self.config.grid;
        let dim = t.c;
        let mut values = vec![0.0; g * g * dim];
        for c in 0..dim {
            for y in 0..g {
                for x in 0..g {
                    values[(y * g + x) * dim + c] = t.data[(c * g + y) * g + x];
                }
            }
        }
        LatentGrid::new(g * g, dim, values).expect("grid shape")
    }

    fn grid_values_to_tensor(&self, values: &[f64]) -> Tensor3 {
        let g = self.config.grid;
        let dim = self.config.latent_dim;
        let mut t = Tensor3::zeros(dim, g, g);
        for c in 0..dim {
            for y in 0..g {
                for x in 0..g {
                    t.data[(c * g + y) * g + x] = values[(y * g + x) * dim + c];
                }
            }
        }
        t
    }

    fn encode_trace(&self, image: &ImageTensor) -> Result<(LatentGrid, EncoderTrace)> {
        self.check_image(image)?;
        let mut x = Tensor3::from_image(image);
        let mut trace = EncoderTrace {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let last = self.params.encoder.len() - 1;
        for (i, conv) in self.params.encoder.iter().enumerate() {
            let a = conv.forward(&x);
            trace.inputs.push(x);
            x = if i == last { a.clone() } else { silu(&a) };
            trace.pre.push(a);
        }
        Ok((self.tensor_to_grid(&x), trace))
    }

    fn encoder_backward(&self, trace: &EncoderTrace, d_latent: &[f64]) -> Vec<Conv2d> {
        let mut grads: Vec<Conv2d> = self.params.encoder.iter().map(Conv2d::zeros_like).collect();
        let mut g = self.grid_values_to_tensor(d_latent);
        let last = self.params.encoder.len() - 1;
        for i in (0..self.params.encoder.len()).rev() {
            if i != last {
                g = silu_backward(&trace.pre[i], &g);
            }
            g = self.params.encoder[i].backward(&trace.inputs[i], &g, &mut grads[i]);
        }
        grads
    }

    fn decode_trace(&self, latent_values: &[f64]) -> DecoderTrace {
        let mut x = self.grid_values_to_tensor(latent_values);
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let last = self.params.decoder.len() - 1;
        for (i, conv) in self.params.decoder.iter().enumerate() {
            let u = upsample2x(&x);
            let a = conv.forward(&u);
            inputs.push(u);
            x = if i == last { sigmoid_map(&a) } else { silu(&a) };
            pre.push(a);
        }
        DecoderTrace {
            inputs,
            pre,
            out: x,
        }
    }

    /// Returns `d loss / d latents` (grid layout) and accumulates decoder grads.
    fn decoder_backward(
        &self,
        trace: &DecoderTrace,
        d_out: Tensor3,
        grads: &mut [Conv2d],
    ) -> Vec<f64> {
        let mut g = d_out;
        let last = self.params.decoder.len() - 1;
        for i in (0..self.params.decoder.len()).rev() {
            g = if i == last {
                sigmoid_backward(&trace.out, &g)
            } else {
                silu_backward(&trace.pre[i], &g)
            };
            g = self.params.decoder[i].backward(&trace.inputs[i], &g, &mut grads[i]);
            g = upsample2x_backward(&g);
        }
        self.tensor_to_grid(&g).values().to_vec()
    }

    /// Continuous, pre-quantization latents.
    pub fn encode(&self, image: &ImageTensor) -> Result<LatentGrid> {
        Ok(self.encode_trace(image)?.0)
    }

    pub fn encode_quantized(&self, image: &ImageTensor) -> Result<LatentGrid> {
        quantize(&self.encode(image)?, &self.params.codebook)
    }

    pub fn decode(&self, latents: &LatentGrid) -> Result<ImageTensor> {
        self.check_latents(latents)?;
        Ok(self.decode_trace(latents.values()).out.to_image().clamp01())
    }

    /// `E` and `Σ` of the given views, following the configured variance options.
    pub fn latent_statistics(&self, views: &[ImageTensor]) -> Result<(LatentGrid, VarianceGrid)> {
        if views.is_empty() {
            return Err(Error::EmptyInput("augmented images"));
        }
        let passes: Vec<(LatentGrid, LatentGrid)> = views
            .par_iter()
            .map(|img| {
                let z = self.encode(img)?;
                let q = quantize(&z, &self.params.codebook)?;
                Ok((z, q))
            })
            .collect::<Result<_>>()?;
        let quantized: Vec<LatentGrid> = passes.iter().map(|(_, q)| q.clone()).collect();
        let (mean, var_q) = estimate_statistics(&quantized)?;
        let variance = match self.config.variance_source {
            VarianceSource::Quantized => var_q,
            VarianceSource::Continuous => {
                let continuous: Vec<LatentGrid> = passes.into_iter().map(|(z, _)| z).collect();
                estimate_statistics(&continuous)?.1
            }
        };
        let variance = if self.config.variance_scalar_per_patch {
            variance.scalar_per_patch()
        } else {
            variance
        };
        Ok((mean, variance))
    }

    /// `copies` images decoded from independent latent samples around `mean`.
    pub fn generate_set(
        &self,
        mean: &LatentGrid,
        variance: &VarianceGrid,
        copies: usize,
        mode: SamplingMode,
        rng: &mut impl Rng,
    ) -> Result<Vec<ImageTensor>> {
        if copies == 0 {
            return Err(Error::EmptyInput("copy count"));
        }
        self.check_latents(mean)?;
        let samples: Vec<LatentGrid> = (0..copies)
            .map(|_| super::sample_latents(mean, variance, mode, rng))
            .collect::<Result<_>>()?;
        samples.par_iter().map(|s| self.decode(s)).collect()
    }

    /// Seeds the codebook with distinct encoder outputs of `images`.
    ///
    /// Rows are drawn without replacement from all patch latents; if there
    /// are too few distinct ones the rest are jittered copies.
    pub fn init_codebook_from(&mut self, images: &[ImageTensor], rng: &mut impl Rng) -> Result<()> {
        let dim = self.config.latent_dim;
        let k = self.config.codebook_size;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for img in images {
            let z = self.encode(img)?;
            for d in 0..z.positions() {
                rows.push(z.row(d).to_vec());
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("codebook seed images"));
        }
        rows.shuffle(rng);
        let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
        for r in &rows {
            if chosen.len() == k {
                break;
            }
            if !chosen.contains(r) {
                chosen.push(r.clone());
            }
        }
        while chosen.len() < k {
            let base = &rows[rng.random_range(0..rows.len())];
            let jittered: Vec<f64> = base
                .iter()
                .map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if !chosen.contains(&jittered) {
                chosen.push(jittered);
            }
        }
        self.params.codebook =
            Codebook::from_rows(k, dim, chosen.into_iter().flatten().collect())?;
        Ok(())
    }

    fn image_pass(&self, image: &ImageTensor, recon_scale: f64) -> Result<ImagePass> {
        let (latent, trace) = self.encode_trace(image)?;
        let quantized = quantize(&latent, &self.params.codebook)?;
        let dec = self.decode_trace(quantized.values());
        let recon = dec.out.to_image();
        let recon_loss = recon.mse(image)?;
        let codebook_sq: f64 = latent
            .values()
            .iter()
            .zip(quantized.values())
            .map(|(z, e)| (z - e) * (z - e))
            .sum::<f64>()
            / latent.values().len() as f64;
        let target = Tensor3::from_image(image);
        let p = target.data.len() as f64;
        let d_out = Tensor3 {
            data: dec
                .out
                .data
                .iter()
                .zip(&target.data)
                .map(|(o, t)| recon_scale * 2.0 * (o - t) / p)
                .collect(),
            ..dec.out
        };
        let mut decoder_grads: Vec<Conv2d> =
            self.params.decoder.iter().map(Conv2d::zeros_like).collect();
        let d_quantized = self.decoder_backward(&dec, d_out, &mut decoder_grads);
        Ok(ImagePass {
            latent,
            quantized,
            trace,
            recon_loss,
            codebook_sq,
            d_quantized,
            decoder_grads,
        })
    }

    /// Reconstruction MSE plus codebook and commitment terms, averaged over
    /// the batch. No adversarial or perceptual term.
    pub fn vq_objective(&self, inputs: &[ImageTensor]) -> Result<LossBreakdown> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("vq batch"));
        }
        let parts: Vec<(f64, f64)> = inputs
            .par_iter()
            .map(|img| {
                let z = self.encode(img)?;
                let q = quantize(&z, &self.params.codebook)?;
                let recon = self.decode(&q)?;
                let sq: f64 = z
                    .values()
                    .iter()
                    .zip(q.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / z.values().len() as f64;
                Ok((recon.mse(img)?, sq))
            })
            .collect::<Result<_>>()?;
        let n = inputs.len() as f64;
        let reconstruction = parts.iter().map(|p| p.0).sum::<f64>() / n;
        let codebook = parts.iter().map(|p| p.1).sum::<f64>() / n;
        let commitment = self.config.beta * codebook;
        let vq = reconstruction + codebook + commitment;
        Ok(LossBreakdown {
            total: vq,
            mse: 0.0,
            vq,
            reconstruction,
            codebook,
            commitment,
        })
    }

    /// Gradients of the VQ objective alone, with stop-gradient on the
    /// encoder side of the codebook term and on the codebook side of the
    /// commitment term, and straight-through quantization.
    pub fn vq_objective_with_gradients(
        &self,
        inputs: &[ImageTensor],
    ) -> Result<(LossBreakdown, GeneratorParams)> {
        self.loss_and_gradients_inner(&[], inputs, &[], 1.0, false)
    }

    /// Total loss `mse + λ·vq` with parameter gradients for a fixed set of
    /// sampling noises (one per generated copy). `Σ` is treated as a constant.
    pub fn loss_and_gradients(
        &self,
        originals: &[ImageTensor],
        augmented: &[ImageTensor],
        noise: &[Vec<f64>],
    ) -> Result<(LossBreakdown, GeneratorParams)> {
        if originals.is_empty() {
            return Err(Error::EmptyInput("originals"));
        }
        if noise.is_empty() {
            return Err(Error::EmptyInput("copy count"));
        }
        self.loss_and_gradients_inner(originals, augmented, noise, self.config.lambda, true)
    }

    fn loss_and_gradients_inner(
        &self,
        originals: &[ImageTensor],
        augmented: &[ImageTensor],
        noise: &[Vec<f64>],
        lambda: f64,
        with_mse: bool,
    ) -> Result<(LossBreakdown, GeneratorParams)> {
        if augmented.is_empty() {
            return Err(Error::EmptyInput("augmented images"));
        }
        for img in originals {
            self.check_image(img)?;
        }
        let n = augmented.len() as f64;
        let beta = self.config.beta;
        let recon_scale = lambda / n;
        let passes: Vec<ImagePass> = augmented
            .par_iter()
            .map(|img| self.image_pass(img, recon_scale))
            .collect::<Result<_>>()?;

        let mut grads = self.params.zeros_like();
        let mut reconstruction = 0.0;
        let mut codebook_term = 0.0;
        for pass in &passes {
            reconstruction += pass.recon_loss;
            codebook_term += pass.codebook_sq;
            accumulate_convs(&mut grads.decoder, &pass.decoder_grads);
            let idx = pass.quantized.indices().expect("quantized");
            let dim = self.config.latent_dim;
            let entries = pass.latent.values().len() as f64;
            // codebook term: d/de mean(sg(z) - e)^2
            let cb = grads.codebook.as_mut_slice();
            for (d, &k) in idx.iter().enumerate() {
                for c in 0..dim {
                    let z = pass.latent.values()[d * dim + c];
                    let e = pass.quantized.values()[d * dim + c];
                    cb[k * dim + c] += recon_scale * 2.0 * (e - z) / entries;
                }
            }
        }
        reconstruction /= n;
        codebook_term /= n;
        let commitment = beta * codebook_term;
        let vq = reconstruction + codebook_term + commitment;

        // d loss / d z_i, before the encoder backward pass.
        let mut d_latents: Vec<Vec<f64>> = passes
            .iter()
            .map(|pass| {
                let entries = pass.latent.values().len() as f64;
                pass.d_quantized
                    .iter()
                    .zip(pass.latent.values().iter().zip(pass.quantized.values()))
                    .map(|(&dq, (&z, &e))| dq + recon_scale * 2.0 * beta * (z - e) / entries)
                    .collect()
            })
            .collect();

        let mut mse = 0.0;
        if with_mse {
            let quantized: Vec<LatentGrid> = passes.iter().map(|p| p.quantized.clone()).collect();
            let (mean, var_q) = estimate_statistics(&quantized)?;
            let variance = match self.config.variance_source {
                VarianceSource::Quantized => var_q,
                VarianceSource::Continuous => {
                    let cont: Vec<LatentGrid> = passes.iter().map(|p| p.latent.clone()).collect();
                    estimate_statistics(&cont)?.1
                }
            };
            let variance = if self.config.variance_scalar_per_patch {
                variance.scalar_per_patch()
            } else {
                variance
            };
            let m = noise.len() as f64;
            let mode = self.config.sampling_mode;
            let results: Vec<(f64, Vec<f64>, Vec<Conv2d>)> = noise
                .par_iter()
                .map(|eps| {
                    let sample = sample_with_noise(&mean, &variance, mode, eps)?;
                    let dec = self.decode_trace(sample.values());
                    let out = dec.out.to_image();
                    let target = nearest_original(&out, originals)?;
                    let loss = out.mse(target)?;
                    let t = Tensor3::from_image(target);
                    let p = t.data.len() as f64;
                    let d_out = Tensor3 {
                        data: dec
                            .out
                            .data
                            .iter()
                            .zip(&t.data)
                            .map(|(o, t)| 2.0 * (o - t) / (p * m))
                            .collect(),
                        ..dec.out
                    };
                    let mut dg: Vec<Conv2d> =
                        self.params.decoder.iter().map(Conv2d::zeros_like).collect();
                    let d_sample = self.decoder_backward(&dec, d_out, &mut dg);
                    Ok((loss, d_sample, dg))
                })
                .collect::<Result<_>>()?;
            let mut d_mean = vec![0.0; mean.values().len()];
            for (loss, d_sample, dg) in &results {
                mse += loss;
                accumulate_convs(&mut grads.decoder, dg);
                for (a, b) in d_mean.iter_mut().zip(d_sample) {
                    *a += b;
                }
            }
            mse /= m;
            // E is the mean of quantized latents; straight-through to each z_i.
            for d in &mut d_latents {
                for (a, b) in d.iter_mut().zip(&d_mean) {
                    *a += b / n;
                }
            }
        }

        let encoder_grads: Vec<Vec<Conv2d>> = passes
            .par_iter()
            .zip(d_latents.par_iter())
            .map(|(pass, dz)| self.encoder_backward(&pass.trace, dz))
            .collect();
        for eg in &encoder_grads {
            accumulate_convs(&mut grads.encoder, eg);
        }

        let total = if with_mse { mse + lambda * vq } else { vq };
        Ok((
            LossBreakdown {
                total,
                mse,
                vq,
                reconstruction,
                codebook: codebook_term,
                commitment,
            },
            grads,
        ))
    }

    /// One Adam step on `mse + λ·vq` over encoder, decoder and codebook.
    pub fn train_step(
        &mut self,
        originals: &[ImageTensor],
        augmented: &[ImageTensor],
        copies: usize,
        rng: &mut impl Rng,
    ) -> Result<LossBreakdown> {
        let len = self.config.positions() * self.config.latent_dim;
        let noise: Vec<Vec<f64>> = (0..copies)
            .map(|_| match self.config.sampling_mode {
                SamplingMode::MeanPlusSigmaEps => draw_noise(len, rng),
                _ => Vec::new(),
            })
            .collect();
        let (loss, grads) = self.loss_and_gradients(originals, augmented, &noise)?;
        if !(loss.total.is_finite() && loss.mse.is_finite() && loss.vq.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.train.step as usize,
                total: loss.total,
                mse: loss.mse,
                vq: loss.vq,
            });
        }
        self.apply_gradients(&grads);
        Ok(loss)
    }

    /// One Adam step on the VQ objective alone (autoencoder warm-up).
    pub fn pretrain_step(&mut self, views: &[ImageTensor]) -> Result<LossBreakdown> {
        let (loss, grads) = self.vq_objective_with_gradients(views)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.train.step as usize,
                total: loss.total,
                mse: loss.mse,
                vq: loss.vq,
            });
        }
        self.apply_gradients(&grads);
        Ok(loss)
    }

    fn apply_gradients(&mut self, grads: &GeneratorParams) {
        self.train.step += 1;
        let t = self.train.step as i32;
        let lr = self.config.learning_rate;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let grad_tensors = grads.tensors();
        for (((param, (_, grad)), m), v) in self
            .params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.train.first_moment.iter_mut())
            .zip(self.train.second_moment.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// The single original in one-shot mode; otherwise the pixel-MSE nearest.
fn nearest_original<'a>(image: &ImageTensor, originals: &'a [ImageTensor]) -> Result<&'a ImageTensor> {
    if originals.len() == 1 {
        return Ok(&originals[0]);
    }
    let mut best = &originals[0];
    let mut best_d = f64::INFINITY;
    for o in originals {
        let d = image.mse(o)?;
        if d < best_d {
            best_d = d;
            best = o;
        }
    }
    Ok(best)
}

/// Mean over generated images of per-pixel MSE against the paired original.
pub fn mse_loss(originals: &[ImageTensor], generated: &[ImageTensor]) -> Result<f64> {
    if originals.is_empty() || generated.is_empty() {
        return Err(Error::EmptyInput("mse images"));
    }
    let mut sum = 0.0;
    for g in generated {
        let target = nearest_original(g, originals)?;
        sum += g.mse(target)?;
    }
    Ok(sum / generated.len() as f64)
}
