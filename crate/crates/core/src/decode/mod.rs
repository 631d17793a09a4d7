//! Decoders: exhaustive and FHT-based MAP, the leaf soft-MAP rule, and the
//! recursive subRPA / soft-subRPA decoders.

pub mod aggregate;
pub mod map;
pub mod rpa;
pub mod softmap;

pub use aggregate::{
    coset_index, coset_pair, hard_aggregate, logsum_aggregate, soft_aggregate,
    weighted_hard_aggregate, weighted_logsum_aggregate, weighted_soft_aggregate,
};
pub use map::{fht_decode, fht_decode_code, map_decode, walsh_hadamard, MapDecoder};
pub use rpa::{
    rpa_decode, soft_subrpa_decode, subrpa_decode, Aggregation, RpaConfig, RpaKind, TreeWeights,
};
pub use softmap::{soft_map, soft_map_matrices};

use crate::construct::CodeSpec;
use crate::error::{Error, Result};
use crate::llr::bpsk;
use crate::project::ProjectionTree;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub codeword: Vec<u8>,
    /// Final LLRs; `codeword(z) = 0` exactly when `final_llr(z) >= 0`.
    /// Decoders without soft output report `±1`.
    pub final_llr: Vec<f64>,
    pub iterations_used: usize,
    pub leaf_map_calls: u64,
    pub info_bits: Option<Vec<u8>>,
}

impl DecodeResult {
    fn hard_only(codeword: Vec<u8>) -> Self {
        DecodeResult {
            final_llr: codeword.iter().map(|&b| bpsk(b)).collect(),
            codeword,
            iterations_used: 1,
            leaf_map_calls: 0,
            info_bits: None,
        }
    }
}

/// Information bits of `codeword`, or `None` when it is not a codeword.
pub fn recover_info_bits(codeword: &[u8], spec: &CodeSpec) -> Result<Option<Vec<u8>>> {
    spec.generator().solve(codeword)
}

/// A configured decoder for one code.
#[derive(Debug, Clone)]
pub enum Decoder {
    Map(MapDecoder),
    /// Plain FHT decoding; only valid for full first-order codes.
    Fht,
    Rpa {
        tree: ProjectionTree,
        kind: RpaKind,
        config: RpaConfig,
        weights: Option<TreeWeights>,
    },
}

impl Decoder {
    pub fn map(spec: &CodeSpec) -> Result<Self> {
        Ok(Decoder::Map(MapDecoder::new(spec.generator())?))
    }

    pub fn fht(spec: &CodeSpec) -> Result<Self> {
        let m = spec.m;
        if spec.k != m + 1 || spec.r != 1 {
            return Err(Error::InvalidParameter(format!(
                "FHT decoding needs the full RM({m},1) code, got ({}, {})",
                spec.n, spec.k
            )));
        }
        Ok(Decoder::Fht)
    }

    pub fn decode(&self, l: &[f64]) -> Result<DecodeResult> {
        match self {
            Decoder::Map(d) => Ok(DecodeResult::hard_only(d.decode(l)?)),
            Decoder::Fht => Ok(DecodeResult::hard_only(fht_decode(l)?)),
            Decoder::Rpa {
                tree,
                kind,
                config,
                weights,
            } => rpa_decode(l, tree, *kind, config, weights.as_ref()),
        }
    }
}
