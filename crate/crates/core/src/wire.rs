//! Length-prefixed frames: "PS", version, message type, u32 BE length,
//! payload.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 2] = *b"PS";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 8;
/// Frames with a longer payload are rejected before allocation.
pub const MAX_PAYLOAD: usize = 64 << 20;

pub const HELLO: u8 = 0x01;
pub const PARTITION_QUERY: u8 = 0x02;
pub const MDS_QUERY: u8 = 0x03;
pub const SJ_QUERY: u8 = 0x04;
pub const ANSWER: u8 = 0x81;
pub const ERROR: u8 = 0xFF;

/// Codes carried in ERROR frames.
pub mod code {
    pub const MALFORMED: u8 = 0x01;
    pub const UNKNOWN_TYPE: u8 = 0x02;
    pub const BAD_QUERY: u8 = 0x03;
    pub const BAD_VERSION: u8 = 0x04;
    pub const TOO_LARGE: u8 = 0x05;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }

    /// ERROR frame: one code byte then a UTF-8 reason.
    pub fn error(code: u8, message: &str) -> Self {
        let mut payload = vec![code];
        payload.extend_from_slice(message.as_bytes());
        Frame {
            msg_type: ERROR,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses exactly one frame occupying all of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::malformed("frame header truncated"));
        }
        let (msg_type, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
        if bytes.len() - HEADER_LEN != len {
            return Err(Error::malformed(format!(
                "header announces {len} payload bytes, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        Ok(Frame {
            msg_type,
            payload: bytes[HEADER_LEN..].to_vec(),
        })
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Option<Self>> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(Error::malformed("stream ended inside a frame header")),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (msg_type, len) = parse_header(&header)?;
        let mut payload = vec![0; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::malformed("stream ended inside a frame payload"),
            _ => e.into(),
        })?;
        Ok(Some(Frame { msg_type, payload }))
    }

    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Turns an ERROR frame into [`Error::Remote`].
    pub fn into_result(self) -> Result<Self> {
        if self.msg_type != ERROR {
            return Ok(self);
        }
        let (code, msg) = self
            .payload
            .split_first()
            .map_or((0, &[][..]), |(c, m)| (*c, m));
        Err(Error::Remote {
            code,
            message: String::from_utf8_lossy(msg).into_owned(),
        })
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u8, usize)> {
    if h[..2] != MAGIC {
        return Err(Error::malformed(format!(
            "bad magic {:02x}{:02x}",
            h[0], h[1]
        )));
    }
    if h[2] != VERSION {
        return Err(Error::malformed(format!("unsupported version {}", h[2])));
    }
    let len = u32::from_be_bytes([h[4], h[5], h[6], h[7]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::malformed(format!(
            "payload of {len} bytes exceeds {MAX_PAYLOAD}"
        )));
    }
    Ok((h[3], len))
}

/// HELLO reply payload: u16 K, u32 t.
pub fn hello_payload(k: usize, t: usize) -> Vec<u8> {
    let mut out = (k as u16).to_be_bytes().to_vec();
    out.extend_from_slice(&(t as u32).to_be_bytes());
    out
}

pub fn parse_hello(payload: &[u8]) -> Result<(usize, usize)> {
    match payload {
        [a, b, c, d, e, f] => Ok((
            u16::from_be_bytes([*a, *b]) as usize,
            u32::from_be_bytes([*c, *d, *e, *f]) as usize,
        )),
        _ => Err(Error::malformed(format!(
            "HELLO reply must be 6 bytes, got {}",
            payload.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let f = Frame::new(HELLO, vec![]);
        assert_eq!(f.to_bytes(), b"PS\x01\x01\x00\x00\x00\x00");
        let f = Frame::new(ANSWER, vec![9, 8]);
        assert_eq!(f.to_bytes(), vec![b'P', b'S', 1, 0x81, 0, 0, 0, 2, 9, 8]);
        assert_eq!(Frame::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(Frame::from_bytes(b"PX\x01\x01\x00\x00\x00\x00").is_err());
        assert!(Frame::from_bytes(b"PS\x02\x01\x00\x00\x00\x00").is_err());
        assert!(Frame::from_bytes(b"PS\x01\x01\x00\x00\x00\x01").is_err());
        assert!(Frame::from_bytes(b"PS\x01\x01\x10\x00\x00\x00").is_err());
        assert!(Frame::read_from(&mut &b"PS\x01"[..]).is_err());
        assert!(Frame::read_from(&mut &b"PS\x01\x01\x00\x00\x00\x03ab"[..]).is_err());
        assert_eq!(Frame::read_from(&mut &b""[..]).unwrap(), None);
    }

    #[test]
    fn errors_and_hello() {
        let e = Frame::error(code::BAD_QUERY, "no")
            .into_result()
            .unwrap_err();
        assert!(matches!(e, Error::Remote { code: 3, ref message } if message == "no"));
        assert_eq!(parse_hello(&hello_payload(8, 4)).unwrap(), (8, 4));
        assert!(parse_hello(&[0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn stream_round_trip(frames in proptest::collection::vec((any::<u8>(), proptest::collection::vec(any::<u8>(), 0..64)), 0..5)) {
            let frames: Vec<Frame> = frames.into_iter().map(|(t, p)| Frame::new(t, p)).collect();
            let mut buf = Vec::new();
            for f in &frames {
                f.write_to(&mut buf).unwrap();
            }
            let mut r = &buf[..];
            let mut back = Vec::new();
            while let Some(f) = Frame::read_from(&mut r).unwrap() {
                back.push(f);
            }
            prop_assert_eq!(back, frames);
        }
    }
}
