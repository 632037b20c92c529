//! Human-readable description of the file formats and wire protocol, as
//! printed by `adage formats`.

use crate::backend::protocol::{MAX_HEADER_LEN, PROTOCOL_VERSION};
use crate::raster::{FORMAT_VERSION, MASK_HEADER_LEN, TENSOR_HEADER_LEN};
use crate::shapley::MCCG_SENTINEL;

pub fn describe() -> String {
    format!(
        "\
ADGT tensor file (little-endian)
  offset 0   4 bytes  magic \"ADGT\"
  offset 4   u32      version = {FORMAT_VERSION}
  offset 8   u32      C (channels, >= 1)
  offset 12  u32      H (height, >= 1)
  offset 16  u32      W (width, >= 1)
  offset {TENSOR_HEADER_LEN}  C*H*W f32 values, index (c*H + h)*W + w
  Header is {TENSOR_HEADER_LEN} bytes. The payload must be exactly 4*C*H*W bytes and every
  value finite.

ADGM mask file (little-endian)
  offset 0   4 bytes  magic \"ADGM\"
  offset 4   u32      version = {FORMAT_VERSION}
  offset 8   u32      H
  offset 12  u32      W
  offset {MASK_HEADER_LEN}  H*W u8 values, row-major
  Header is {MASK_HEADER_LEN} bytes. Binary masks hold 0/1; MCCG maps hold a group index, or
  {MCCG_SENTINEL} for pixels outside the eligible set.

PGM export
  Binary P5, maxval 255, one gray level per category via a palette.

Model backend wire protocol (stdio)
  frame   = u32 LE header length | JSON header | raw payload
  header  <= {MAX_HEADER_LEN} bytes; payload length follows from the header
  parent -> {{\"op\":\"hello\",\"version\":{PROTOCOL_VERSION}}}
  child  -> {{\"op\":\"hello\",\"version\":{PROTOCOL_VERSION},\"n_class\":N,\"batch\":false}}
  parent -> {{\"op\":\"predict\",\"c\":C,\"h\":H,\"w\":W}} + C*H*W f32 LE
  child  -> {{\"op\":\"logits\",\"n_class\":N,\"h\":H,\"w\":W}} + N*H*W f32 LE
         or {{\"op\":\"error\",\"message\":\"...\"}}
  parent -> {{\"op\":\"bye\"}}; the child must exit with status 0
"
    )
}

#[cfg(test)]
mod tests {
    #[test]
    fn mentions_each_format() {
        let text = super::describe();
        for needle in ["ADGT", "ADGM", "P5", "\"op\":\"hello\"", "offset 20"] {
            assert!(text.contains(needle), "{needle}");
        }
    }
}
