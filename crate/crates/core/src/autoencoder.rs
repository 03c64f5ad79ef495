//! Mirror-symmetric autoencoder over segment behavior vectors.
//!
//! The encoder compresses the 30 standardized behavior counts of a segment
//! through `30 → 24 → 16 → 8`; the decoder mirrors it back to 30. Only the
//! bottleneck output is used downstream. Empty segments never reach the
//! network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::BEHAVIOR_DIM;
use crate::nn::{Mlp, OutputKind, TrainConfig, TrainReport};

/// Bottleneck width.
pub const EMBED_DIM: usize = 8;
pub const DEFAULT_ENCODER: [usize; 4] = [BEHAVIOR_DIM, 24, 16, EMBED_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    net: Mlp,
    encoder_depth: usize,
}

/// Expands encoder sizes `[in, h1, .., bottleneck]` into the full mirrored stack.
pub fn mirrored_sizes(encoder: &[usize]) -> Result<Vec<usize>> {
    if encoder.len() < 2 || encoder.contains(&0) {
        return Err(Error::BadShape(format!("encoder sizes {encoder:?}")));
    }
    let mut sizes = encoder.to_vec();
    sizes.extend(encoder.iter().rev().skip(1));
    Ok(sizes)
}

impl Autoencoder {
    /// Builds from the full layer list, which must read the same in both directions.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let n = layer_sizes.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::BadShape(format!("{layer_sizes:?} has no single bottleneck layer")));
        }
        if layer_sizes.iter().ne(layer_sizes.iter().rev()) {
            return Err(Error::BadShape(format!("{layer_sizes:?} is not mirror-symmetric")));
        }
        Ok(Self {
            net: Mlp::new(layer_sizes, OutputKind::Linear, seed)?,
            encoder_depth: n / 2,
        })
    }

    pub fn from_encoder(encoder: &[usize], seed: u64) -> Result<Self> {
        Self::init(&mirrored_sizes(encoder)?, seed)
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.layers[self.encoder_depth - 1].outputs
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.partial(x, self.encoder_depth)
    }

    /// Embedding and reconstruction of one row.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut acts = self.net.activations(x)?;
        let recon = acts.pop().unwrap();
        Ok((acts.swap_remove(self.encoder_depth), recon))
    }

    /// Reconstruction loss: row mean of the per-dimension squared error.
    pub fn reconstruction_loss<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<f64> {
        self.net.loss(rows, rows)
    }

    pub fn train<R: AsRef<[f64]>>(&mut self, rows: &[R], cfg: &TrainConfig) -> Result<TrainReport> {
        self.net.train(rows, rows, cfg)
    }

    /// Encodes the non-empty rows of each flow. Returns, per flow, the
    /// embeddings (in segment order) and the empty mask.
    pub fn encode_all<R: AsRef<[f64]>>(
        &self,
        flows: &[(Vec<R>, Vec<bool>)],
    ) -> Result<Vec<(Vec<Vec<f64>>, Vec<bool>)>> {
        flows
            .iter()
            .map(|(rows, mask)| {
                if rows.len() != mask.len() {
                    return Err(Error::AlignmentError(format!(
                        "{} behavior rows but {} mask entries",
                        rows.len(),
                        mask.len()
                    )));
                }
                let embeddings = rows
                    .iter()
                    .zip(mask)
                    .filter(|(_, empty)| !**empty)
                    .map(|(r, _)| self.encode(r.as_ref()))
                    .collect::<Result<Vec<_>>>()?;
                Ok((embeddings, mask.clone()))
            })
            .collect()
    }
}
