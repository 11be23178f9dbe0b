//! Noise-contrast baseline: the contrast stream is the deep stream plus
//! Gaussian noise instead of a shallow-layer run.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernel::LogitVector;
use crate::provider::{PairedLogitProvider, ProviderCapability};
use crate::rng::{derive_seed, RngState};
use crate::vocab::DecodeContext;

#[derive(Clone, Debug)]
pub struct NoiseContrastProvider<P> {
    base: P,
    noise: Normal<f64>,
    seed: u64,
}

/// Wraps a branching provider. Noise is a pure function of `(seed, prefix)`.
pub fn make_noise_contrast<P: PairedLogitProvider>(base: P, sigma: f64, seed: u64) -> Result<NoiseContrastProvider<P>> {
    if !base.capability().branching {
        return Err(Error::Capability(
            "noise contrast needs a branching base provider".into(),
        ));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::validation(format!("sigma must be > 0, got {sigma}")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::validation(e.to_string()))?;
    Ok(NoiseContrastProvider { base, noise, seed })
}

pub(crate) fn prefix_seed(seed: u64, prefix: &DecodeContext) -> u64 {
    let path: Vec<u64> = std::iter::once(prefix.prompt.len() as u64)
        .chain(prefix.prompt.iter().map(|t| t.0 as u64))
        .chain(std::iter::once(u64::MAX))
        .chain(prefix.generated.iter().map(|t| t.0 as u64))
        .collect();
    derive_seed(seed, &path)
}

impl<P: PairedLogitProvider> PairedLogitProvider for NoiseContrastProvider<P> {
    fn capability(&self) -> ProviderCapability {
        self.base.capability()
    }

    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)> {
        let (deep, _) = self.base.next_logits(prefix)?;
        let mut rng = RngState::new(prefix_seed(self.seed, prefix));
        let shallow = deep
            .values()
            .iter()
            .map(|&d| d + self.noise.sample(rng.inner()))
            .collect();
        Ok((deep, LogitVector::shallow(shallow)?))
    }
}
