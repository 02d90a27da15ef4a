//! Binary PGM (`P5`) with 16-bit big-endian samples; sample value = label.

use std::path::Path;

use super::{write_atomic, IoError};
use crate::frame::LabeledFrame;
use crate::geometry::MAX_LABEL;

pub fn encode_frame(frame: &LabeledFrame) -> Result<Vec<u8>, IoError> {
    let (w, h) = frame.dims();
    let mut out = format!("P5\n{w} {h}\n{MAX_LABEL}\n").into_bytes();
    out.reserve(2 * w * h);
    for (i, &label) in frame.labels().iter().enumerate() {
        let sample = u16::try_from(label).map_err(|_| IoError::LabelOverflow {
            label,
            x: i % w,
            y: i / w,
        })?;
        out.extend_from_slice(&sample.to_be_bytes());
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> IoError {
        IoError::Format {
            path: self.path.to_path_buf(),
            offset,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<(usize, usize), IoError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let value = text
            .parse()
            .map_err(|_| self.err(start, format!("header field {field}: expected a decimal number")))?;
        Ok((value, start))
    }
}

/// Parses PGM bytes; `path` is only used in error messages.
pub fn decode_frame(bytes: &[u8], index: usize, path: &Path) -> Result<LabeledFrame, IoError> {
    let mut h = Header { bytes, pos: 0, path };
    if bytes.get(..2) != Some(b"P5") {
        return Err(h.err(0, "header field magic: expected P5"));
    }
    h.pos = 2;
    let (width, _) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, at) = h.number("maxval")?;
    if maxval < 256 {
        return Err(h.err(
            at,
            format!("header field maxval: {maxval} declares 8-bit samples, 16-bit labels required"),
        ));
    }
    if maxval > MAX_LABEL as usize {
        return Err(h.err(at, format!("header field maxval: {maxval} exceeds 65535")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(h.err(h.pos, "expected one whitespace byte after maxval"));
    }
    h.pos += 1;
    if width == 0 || height == 0 {
        return Err(h.err(0, "header fields width/height: frame is empty"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| h.err(0, "header fields width/height: frame too large"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(h.err(
            bytes.len(),
            format!("truncated payload: {} of {need} sample bytes present", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(h.err(h.pos + need, "trailing bytes after payload"));
    }
    let mut labels = Vec::with_capacity(width * height);
    for (i, pair) in payload.chunks_exact(2).enumerate() {
        let v = u16::from_be_bytes([pair[0], pair[1]]) as usize;
        if v > maxval {
            return Err(h.err(h.pos + 2 * i, format!("sample {v} exceeds maxval {maxval}")));
        }
        labels.push(v as u32);
    }
    Ok(LabeledFrame::new(index, width, height, labels).expect("size checked"))
}

pub fn read_frame(path: &Path, index: usize) -> Result<LabeledFrame, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_frame(&bytes, index, path)
}

pub fn write_frame(frame: &LabeledFrame, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_frame(frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.pgm")
    }

    #[test]
    fn zero_frame_round_trips_byte_identical() {
        let f = LabeledFrame::blank(0, 3, 2).unwrap();
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(&bytes[..15], b"P5\n3 2\n65535\n\0\0");
        let back = decode_frame(&bytes, 0, p()).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_frame(&back).unwrap(), bytes);
    }

    #[test]
    fn boundary_labels_round_trip() {
        let f = LabeledFrame::from_rows(4, &[&[1, 2, 65535], &[0, 0, 0]]).unwrap();
        let back = decode_frame(&encode_frame(&f).unwrap(), 4, p()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn eight_bit_file_names_maxval() {
        let bytes = b"P5\n2 1\n255\n\x01\x02".to_vec();
        let err = decode_frame(&bytes, 0, p()).unwrap_err().to_string();
        assert!(err.contains("maxval"), "{err}");
        assert!(err.contains("byte 7"), "{err}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = encode_frame(&LabeledFrame::blank(0, 4, 4).unwrap()).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = decode_frame(&bytes, 0, p()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains(&format!("byte {}", bytes.len())), "{err}");
    }

    #[test]
    fn oversized_label_refused_on_write() {
        let f = LabeledFrame::from_rows(0, &[&[70000]]).unwrap();
        assert!(matches!(
            encode_frame(&f),
            Err(IoError::LabelOverflow { label: 70000, .. })
        ));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let bytes = b"P5\n# label frame\n1 1\n65535\n\x00\x07".to_vec();
        assert_eq!(decode_frame(&bytes, 0, p()).unwrap().labels(), &[7]);
    }

    #[test]
    fn bad_magic() {
        let err = decode_frame(b"P2\n1 1\n65535\n0", 0, p()).unwrap_err().to_string();
        assert!(err.contains("magic"));
    }
}
