//! JSON attention dump: the on-disk and on-wire form of an [`AttentionStack`].
//!
//! ```json
//! {"q_len": 2, "i_len": 5, "cls_offset": 1, "patch_grid": [2, 2],
//!  "layers": [{"kind": "fusion", "heads": 1, "qq": [...], "qi": [...]}]}
//! ```
//! Arrays are flat, row-major, head-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{AttentionStack, HeadTensor, LayerAttention, LayerKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDump {
    pub kind: LayerKind,
    pub heads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qq: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub q_len: usize,
    pub i_len: usize,
    #[serde(default)]
    pub cls_offset: usize,
    pub patch_grid: [usize; 2],
    pub layers: Vec<LayerDump>,
}

impl AttentionDump {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dump serializes")
    }

    /// Converts and validates against the declared shapes.
    pub fn to_stack<T: Scalar>(&self) -> Result<AttentionStack<T>> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(idx, l)| {
                let tensor = |data: &Option<Vec<f64>>,
                              rows,
                              cols,
                              name: &str|
                 -> Result<Option<HeadTensor<T>>> {
                    data.as_ref()
                        .map(|d| {
                            HeadTensor::from_vec(
                                l.heads,
                                rows,
                                cols,
                                d.iter().map(|&v| T::of(v)).collect(),
                            )
                            .map_err(|e| Error::invalid(format!("layer {idx} {name}: {e}")))
                        })
                        .transpose()
                };
                Ok(LayerAttention {
                    kind: l.kind,
                    qq: tensor(&l.qq, self.q_len, self.q_len, "qq")?,
                    ii: tensor(&l.ii, self.i_len, self.i_len, "ii")?,
                    qi: tensor(&l.qi, self.q_len, self.i_len, "qi")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AttentionStack::new(
            layers,
            self.q_len,
            self.i_len,
            self.cls_offset,
            (self.patch_grid[0], self.patch_grid[1]),
        )
    }

    pub fn from_stack<T: Scalar>(stack: &AttentionStack<T>) -> Self {
        let flat = |t: &Option<HeadTensor<T>>| {
            t.as_ref()
                .map(|t| t.as_slice().iter().map(|v| v.to_f64_lossy()).collect())
        };
        Self {
            q_len: stack.q_len,
            i_len: stack.i_len,
            cls_offset: stack.cls_offset,
            patch_grid: [stack.patch_grid.0, stack.patch_grid.1],
            layers: stack
                .layers
                .iter()
                .map(|l| LayerDump {
                    kind: l.kind,
                    heads: l.heads(),
                    qq: flat(&l.qq),
                    ii: flat(&l.ii),
                    qi: flat(&l.qi),
                })
                .collect(),
        }
    }
}
