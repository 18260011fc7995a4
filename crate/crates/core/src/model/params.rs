use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// The three model families compared in evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Encoder, RNN, observation decoder and fire decoder.
    DynamicAutoenc,
    /// Encoder, RNN and fire decoder; no observation decoder.
    GruBaseline,
    /// Encoder and fire decoder only; the state is the current frame's encoding.
    StaticGenerative,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::DynamicAutoenc, Variant::GruBaseline, Variant::StaticGenerative];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DynamicAutoenc => "dynamic_autoenc",
            Variant::GruBaseline => "gru_baseline",
            Variant::StaticGenerative => "static_generative",
        }
    }

    pub fn networks(self) -> &'static [Network] {
        match self {
            Variant::DynamicAutoenc => &[Network::Encoder, Network::Rnn, Network::Decoder1, Network::Decoder2],
            Variant::GruBaseline => &[Network::Encoder, Network::Rnn, Network::Decoder2],
            Variant::StaticGenerative => &[Network::Encoder, Network::Decoder2],
        }
    }

    pub fn has(self, net: Network) -> bool {
        self.networks().contains(&net)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Encoder,
    Rnn,
    Decoder1,
    Decoder2,
}

/// Optimisation groups updated on separate time scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Encoder, RNN and observation decoder.
    Sys,
    /// Fire decoder.
    Pred,
}

impl Network {
    pub fn group(self) -> ParamGroup {
        match self {
            Network::Decoder2 => ParamGroup::Pred,
            _ => ParamGroup::Sys,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub network: Network,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn is_bias(&self) -> bool {
        self.tensor.shape().len() == 1
    }

    /// Fan-in used for initialisation: all dimensions but the output one.
    pub fn fan_in(&self) -> usize {
        let s = self.tensor.shape();
        match s.len() {
            2 => s[0],
            4 => s[1] * s[2] * s[3],
            _ => 1,
        }
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(entries: Vec<Param<T>>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<T>] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    /// Indices of the entries in `group`, in set order.
    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].network.group() == group)
            .collect()
    }

    pub fn has_network(&self, net: Network) -> bool {
        self.entries.iter().any(|p| p.network == net)
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// All parameters concatenated in set order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.iter().flat_map(|p| p.tensor.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.total_elements() {
            return Err(Error::Dimension {
                op: "load_flat",
                lhs: vec![self.total_elements()],
                rhs: vec![flat.len()],
            });
        }
        let mut off = 0;
        for p in &mut self.entries {
            let n = p.tensor.len();
            p.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    network: p.network,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Uniform fan-in scaled weights with standard deviation `sqrt(2/fan_in)`,
    /// zero biases. Entries are drawn in set order from one seeded stream.
    pub fn initialise(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.entries {
            if p.is_bias() {
                p.tensor.data_mut().fill(T::zero());
                continue;
            }
            let bound = (6.0 / p.fan_in() as f64).sqrt();
            for v in p.tensor.data_mut() {
                *v = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
    }
}
