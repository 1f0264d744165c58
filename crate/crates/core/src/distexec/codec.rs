//! Wire format of [`ClassicalMessage`] frames (little-endian):
//!
//! | field        | type                 |
//! |--------------|----------------------|
//! | length       | u32, bytes after it  |
//! | sequence_no  | u32                  |
//! | sender       | u8                   |
//! | path_len     | u8, number of bits   |
//! | path         | `ceil(path_len / 8)` bytes, bit `i` at byte `i / 8`, bit `i % 8` |
//! | outcome      | u8                   |
//! | probability  | f64                  |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame size for an empty branch path.
pub const MIN_FRAME_LEN: usize = 4 + 4 + 1 + 1 + 1 + 8;
pub const MAX_PATH_LEN: usize = u8::MAX as usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalMessage {
    pub sequence_no: u32,
    pub sender: u8,
    /// Outcome bits of the sender's branch so far, in event order.
    pub branch_path: Vec<u8>,
    pub outcome: u8,
    pub branch_probability_factor: f64,
}

fn path_bytes(bits: usize) -> usize {
    bits.div_ceil(8)
}

pub fn encode_message(msg: &ClassicalMessage) -> Result<Vec<u8>> {
    if msg.branch_path.len() > MAX_PATH_LEN {
        return Err(Error::Frame(format!("branch path of {} bits exceeds {MAX_PATH_LEN}", msg.branch_path.len())));
    }
    if msg.outcome > 1 || msg.branch_path.iter().any(|&b| b > 1) {
        return Err(Error::Frame("outcome bits must be 0 or 1".into()));
    }
    let body = 4 + 1 + 1 + path_bytes(msg.branch_path.len()) + 1 + 8;
    let mut out = Vec::with_capacity(4 + body);
    out.extend_from_slice(&(body as u32).to_le_bytes());
    out.extend_from_slice(&msg.sequence_no.to_le_bytes());
    out.push(msg.sender);
    out.push(msg.branch_path.len() as u8);
    let mut packed = vec![0u8; path_bytes(msg.branch_path.len())];
    for (i, &b) in msg.branch_path.iter().enumerate() {
        packed[i / 8] |= b << (i % 8);
    }
    out.extend_from_slice(&packed);
    out.push(msg.outcome);
    out.extend_from_slice(&msg.branch_probability_factor.to_le_bytes());
    Ok(out)
}

/// Total frame length announced by the prefix of `buf`, if the prefix is
/// complete.
pub fn frame_len(buf: &[u8]) -> Option<usize> {
    let prefix: [u8; 4] = buf.get(..4)?.try_into().ok()?;
    Some(4 + u32::from_le_bytes(prefix) as usize)
}

pub fn decode_message(frame: &[u8]) -> Result<ClassicalMessage> {
    let total = frame_len(frame).ok_or_else(|| Error::Frame("truncated length prefix".into()))?;
    if total != frame.len() {
        return Err(Error::Frame(format!("length prefix announces {total} bytes, frame has {}", frame.len())));
    }
    if frame.len() < MIN_FRAME_LEN {
        return Err(Error::Frame(format!("frame of {} bytes is shorter than the minimum {MIN_FRAME_LEN}", frame.len())));
    }
    let sequence_no = u32::from_le_bytes(frame[4..8].try_into().expect("4 bytes"));
    let sender = frame[8];
    let path_len = frame[9] as usize;
    let pb = path_bytes(path_len);
    if frame.len() != MIN_FRAME_LEN + pb {
        return Err(Error::Frame(format!("path of {path_len} bits does not match frame length {}", frame.len())));
    }
    let packed = &frame[10..10 + pb];
    let branch_path = (0..path_len).map(|i| packed[i / 8] >> (i % 8) & 1).collect();
    let outcome = frame[10 + pb];
    if outcome > 1 {
        return Err(Error::Frame(format!("outcome byte {outcome}")));
    }
    let branch_probability_factor = f64::from_le_bytes(frame[11 + pb..19 + pb].try_into().expect("8 bytes"));
    Ok(ClassicalMessage { sequence_no, sender, branch_path, outcome, branch_probability_factor })
}
