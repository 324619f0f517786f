use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, concat_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamStore};

/// Name and width of one captured discriminator layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub width: usize,
}

/// Convolutional discriminator over embedded sequences.
///
/// Each window size has its own filter bank (ReLU, then max over time); the
/// pooled vectors are concatenated into the feature `f`. The class head maps
/// `f` to K+1 logits (the last one is the synthetic class); the latent head
/// maps `f` through a tanh layer to a reconstruction of the generator's code.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub params: ParamStore,
    convs: Vec<(usize, Linear)>,
    class_head: Linear,
    recon_hidden: Linear,
    recon_out: Linear,
    pub d_e: usize,
    pub n_filters: usize,
    pub num_classes: usize,
    pub d_recon_hidden: usize,
    pub d_z: usize,
}

/// Tape outputs of one batched forward pass.
pub struct Forward<'t> {
    pub pooled: Vec<Var<'t>>,
    pub feature: Var<'t>,
    pub recon_hidden: Var<'t>,
    pub logits: Var<'t>,
    pub z_hat: Var<'t>,
}

impl<'t> Forward<'t> {
    /// Post-activation layer outputs in capture order; softmax last.
    pub fn layer_record(&self) -> Vec<Array2<f64>> {
        let mut layers: Vec<Array2<f64>> = self.pooled.iter().map(|p| p.value()).collect();
        layers.push(self.feature.value());
        let logits = self.logits.value();
        let softmax = crate::autodiff::softmax_rows(&logits);
        layers.push(logits);
        layers.push(softmax);
        layers
    }
}

/// Per-sample result of [`Discriminator::discriminate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutput {
    pub feature: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub z_hat: Vec<f64>,
    /// Captured layers (embedding layer excluded), empty unless requested.
    pub layer_record: Vec<Vec<f64>>,
}

impl Discriminator {
    pub fn new<R: Rng>(
        rng: &mut R,
        d_e: usize,
        window_sizes: &[usize],
        n_filters: usize,
        num_classes: usize,
        d_recon_hidden: usize,
        d_z: usize,
    ) -> Self {
        let mut params = ParamStore::new();
        let convs = window_sizes
            .iter()
            .map(|&w| (w, Linear::new(&mut params, rng, &format!("disc.conv{w}"), w * d_e, n_filters)))
            .collect::<Vec<_>>();
        let f = n_filters * window_sizes.len();
        let class_head = Linear::new(&mut params, rng, "disc.class", f, num_classes + 1);
        let recon_hidden = Linear::new(&mut params, rng, "disc.recon_hidden", f, d_recon_hidden);
        let recon_out = Linear::new(&mut params, rng, "disc.recon_out", d_recon_hidden, d_z);
        Discriminator {
            params,
            convs,
            class_head,
            recon_hidden,
            recon_out,
            d_e,
            n_filters,
            num_classes,
            d_recon_hidden,
            d_z,
        }
    }

    pub fn window_sizes(&self) -> Vec<usize> {
        self.convs.iter().map(|(w, _)| *w).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.n_filters * self.convs.len()
    }

    /// Captured layers in forward order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self
            .convs
            .iter()
            .map(|(w, _)| LayerSpec { name: format!("pool_w{w}"), width: self.n_filters })
            .collect();
        specs.push(LayerSpec { name: "feature".into(), width: self.feature_dim() });
        specs.push(LayerSpec { name: "class_logits".into(), width: self.num_classes + 1 });
        specs.push(LayerSpec { name: "softmax".into(), width: self.num_classes + 1 });
        specs
    }

    /// Forward pass on `(batch·seq_len)×d_e` rows, sample-major.
    /// Sequences shorter than the widest window are zero-padded.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, batch: usize, seq_len: usize) -> Forward<'t> {
        let tape = x.tape();
        let widest = self.convs.iter().map(|(w, _)| *w).max().unwrap_or(1);
        let (x, t) = if seq_len < widest {
            let zero_row = batch * seq_len;
            let stacked = concat_rows(&[x, tape.constant(Array2::zeros((1, self.d_e)))]);
            let idx = (0..batch)
                .flat_map(|b| (0..widest).map(move |t| if t < seq_len { b * seq_len + t } else { zero_row }))
                .collect();
            (stacked.gather_rows(idx), widest)
        } else {
            (x, seq_len)
        };

        let pooled: Vec<Var<'t>> = self
            .convs
            .iter()
            .map(|(w, lin)| {
                let positions = t - w + 1;
                let shifted: Vec<Var<'t>> = (0..*w)
                    .map(|j| {
                        let idx = (0..batch).flat_map(|b| (0..positions).map(move |q| b * t + q + j)).collect();
                        x.gather_rows(idx)
                    })
                    .collect();
                lin.forward(p, concat_cols(&shifted)).relu().segment_max(positions)
            })
            .collect();
        let feature = concat_cols(&pooled);
        let logits = self.class_head.forward(p, feature);
        let recon_hidden = self.recon_hidden.forward(p, feature).tanh();
        let z_hat = self.recon_out.forward(p, recon_hidden);
        Forward { pooled, feature, recon_hidden, logits, z_hat }
    }

    /// Inference on a batch of embedded sequences, `(batch·seq_len)×d_e`.
    pub fn discriminate_batch(
        &self,
        embedded: &Array2<f64>,
        batch: usize,
        seq_len: usize,
        capture_stats: bool,
    ) -> Result<Vec<DiscriminatorOutput>> {
        if embedded.ncols() != self.d_e || embedded.nrows() != batch * seq_len {
            return Err(Error::Shape(format!(
                "expected {}×{} embedded rows, got {:?}",
                batch * seq_len,
                self.d_e,
                embedded.dim()
            )));
        }
        if batch == 0 {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let out = self.forward(&p, tape.constant(embedded.clone()), batch, seq_len.max(1));
        let feature = out.feature.value();
        let logits = out.logits.value();
        let z_hat = out.z_hat.value();
        let layers = if capture_stats { out.layer_record() } else { Vec::new() };
        Ok((0..batch)
            .map(|b| DiscriminatorOutput {
                feature: feature.row(b).to_vec(),
                class_logits: logits.row(b).to_vec(),
                z_hat: z_hat.row(b).to_vec(),
                layer_record: layers.iter().map(|l| l.row(b).to_vec()).collect(),
            })
            .collect())
    }

    /// Single embedded sequence, `seq_len×d_e`.
    pub fn discriminate(&self, embedded_sequence: &Array2<f64>, capture_stats: bool) -> Result<DiscriminatorOutput> {
        let seq_len = embedded_sequence.nrows();
        if seq_len == 0 {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        let mut out = self.discriminate_batch(embedded_sequence, 1, seq_len, capture_stats)?;
        Ok(out.remove(0))
    }
}
