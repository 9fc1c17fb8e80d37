//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size          field
//! 0       8             magic "UGRECKPT"
//! 8       4   u32       format version (1)
//! 12      4   u32       k
//! 16      8   u64       entity count
//! 24      4   u32       relation count R
//! 28      4   u32       attention block count A (1 when shared, else R)
//! 32      4   u32       flags: bit 0 attention on, bit 1 attention scaled by k,
//!                       bit 2 shared attention block, bits 8..16 undirected scorer (0 hyperplane, 1 distmult,
//!                       2 directed pair)
//! 36      32            SHA-256 of the relation catalog
//! 68      32            SHA-256 of the entity vocabulary
//! 100     R             relation kinds: bit 0 directed, bit 1 interaction
//! 100+R   8·n           f64 tensors, row-major, in order:
//!                       entity_emb (E·k), entity_proj (E·k), rel_emb (R·k),
//!                       rel_proj (R·k), att_weight (A·k·2k), att_bias (A·k)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamFamily, RelationKind, UndirectedScorer};

pub const MAGIC: &[u8; 8] = b"UGRECKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub catalog_hash: [u8; 32],
    pub vocab_hash: [u8; 32],
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(HEADER_LEN + p.n_relations() + 8 * tensor_len(p));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.k() as u32).to_le_bytes());
        out.extend_from_slice(&(p.n_entities as u64).to_le_bytes());
        out.extend_from_slice(&(p.n_relations() as u32).to_le_bytes());
        out.extend_from_slice(&(p.n_attention_blocks() as u32).to_le_bytes());
        let mut flags = 0u32;
        if p.config.use_attention {
            flags |= 1;
        }
        if p.config.scale_attention_by_k {
            flags |= 2;
        }
        if p.config.shared_attention {
            flags |= 4;
        }
        flags |= (p.config.undirected_scorer.code() as u32) << 8;
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.catalog_hash);
        out.extend_from_slice(&self.vocab_hash);
        out.extend(
            p.relations
                .iter()
                .map(|r| u8::from(r.directed) | (u8::from(r.interaction) << 1)),
        );
        for f in ParamFamily::ALL {
            for x in p.family(f) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint (bad magic or truncated header)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let k = u32_at(12) as usize;
        let n_entities = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let n_rel = u32_at(24) as usize;
        let n_att = u32_at(28) as usize;
        let flags = u32_at(32);
        if k == 0 {
            return Err(err("k is zero".into()));
        }
        let scorer = UndirectedScorer::from_code(((flags >> 8) & 0xff) as u8)
            .ok_or_else(|| err(format!("unknown scorer code in flags {flags:#x}")))?;
        let shared = flags & 4 != 0;
        if n_att != if shared { 1 } else { n_rel } {
            return Err(err(format!("{n_att} attention blocks for {n_rel} relations")));
        }
        let catalog_hash: [u8; 32] = bytes[36..68].try_into().expect("32 bytes");
        let vocab_hash: [u8; 32] = bytes[68..100].try_into().expect("32 bytes");
        let kinds_end = HEADER_LEN + n_rel;
        if bytes.len() < kinds_end {
            return Err(err("truncated relation table".into()));
        }
        let relations = bytes[HEADER_LEN..kinds_end]
            .iter()
            .map(|b| RelationKind {
                directed: b & 1 != 0,
                interaction: b & 2 != 0,
            })
            .collect();
        let config = ModelConfig {
            k,
            use_attention: flags & 1 != 0,
            scale_attention_by_k: flags & 2 != 0,
            undirected_scorer: scorer,
            shared_attention: shared,
        };
        let mut params = ModelParams::zeros(config, n_entities, relations);
        let expected = kinds_end + 8 * tensor_len(&params);
        if bytes.len() != expected {
            return Err(err(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut floats = bytes[kinds_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for f in ParamFamily::ALL {
            for x in params.family_mut(f) {
                *x = floats.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            params,
            catalog_hash,
            vocab_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::from(e).in_file(&path))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }

    /// Refuses a dataset whose catalog or vocabulary differs from the one trained on.
    pub fn check_binding(&self, catalog_hash: &[u8; 32], vocab_hash: &[u8; 32]) -> Result<()> {
        if &self.catalog_hash != catalog_hash {
            return Err(Error::Mismatch(format!(
                "catalog hash {} (checkpoint) vs {} (dataset)",
                hex(&self.catalog_hash),
                hex(catalog_hash)
            )));
        }
        if &self.vocab_hash != vocab_hash {
            return Err(Error::Mismatch(format!(
                "vocabulary hash {} (checkpoint) vs {} (dataset)",
                hex(&self.vocab_hash),
                hex(vocab_hash)
            )));
        }
        Ok(())
    }
}

fn tensor_len(p: &ModelParams) -> usize {
    ParamFamily::ALL.iter().map(|f| p.family(*f).len()).sum()
}
