//! Versioned JSON documents holding a [`KernelIr`].
//!
//! ```json
//! {
//!   "format": "sbmgen-kernel-ir",
//!   "version": 1,
//!   "ir": { "dimension": 2, "unknown": "u", "scheme": null, "steady": true,
//!           "volume": { "prelude": [], "bilinear": [...], "linear": [...] },
//!           "dirichlet": {...}, "neumann": {...} }
//! }
//! ```
//!
//! Each contribution lists its basis selectors (`"value"` or
//! `{"deriv": k}`) and a scalar program `{ "coef": c, "factors": [...] }`
//! whose factors are `{ "operand": ..., "power": p }`. Operands are tagged
//! objects such as `{"coef": "alpha"}`, `"time_step"`, `{"previous": 1}`,
//! `{"special": {"n_tilde": 0}}`, or `{"field": "sin(pi * x)"}`.

use serde::{Deserialize, Serialize};

use crate::symbolic::{KernelIr, IR_FORMAT, IR_VERSION};

use super::CodegenError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrDocument {
    pub format: String,
    pub version: u32,
    pub ir: KernelIr,
}

/// Canonical pretty-printed document, newline-terminated.
pub fn serialize_ir(ir: &KernelIr) -> String {
    let doc = IrDocument {
        format: IR_FORMAT.to_string(),
        version: IR_VERSION,
        ir: ir.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("kernel IR serializes");
    s.push('\n');
    s
}

pub fn parse_ir(text: &str) -> Result<KernelIr, CodegenError> {
    let doc: IrDocument = serde_json::from_str(text).map_err(|e| CodegenError::Document(e.to_string()))?;
    if doc.format != IR_FORMAT {
        return Err(CodegenError::Document(format!("format `{}` is not `{IR_FORMAT}`", doc.format)));
    }
    if doc.version != IR_VERSION {
        return Err(CodegenError::Document(format!(
            "version {} is not supported (expected {IR_VERSION})",
            doc.version
        )));
    }
    Ok(doc.ir)
}
