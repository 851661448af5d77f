//! Little-endian binary reading shared by the file formats.

use crate::error::{Error, Result};

/// Bounds-checked little-endian reader that reports byte offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.offset(), reason)
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {remaining} left")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.err(format!("{what} length overflows")))?;
        Ok(self.bytes(bytes, what)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let start = self.offset();
        let b = self.bytes(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(start, format!("{what} is not UTF-8")))
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let m = self.bytes(4, "magic")?;
        if m != magic {
            return Err(Error::format(
                0,
                format!("bad magic {m:?}, expected {:?}", std::str::from_utf8(magic).unwrap()),
            ));
        }
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::format(4, format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
