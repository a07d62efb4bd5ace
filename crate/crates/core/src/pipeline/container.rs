use crate::entropy::Alphabet;
use crate::range_coder::ChannelFlags;
use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"MSCAEC01";

/// Serialized output of one coded latent pair.
///
/// Layout, little-endian: magic, u32 h_y w_y c_y h_z w_z c_z, i32 q_min q_max,
/// `ceil(c_y / 8)` flag bytes, u32 z_len, z bytes, u32 y_len, y bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub y_dims: (usize, usize, usize),
    pub z_dims: (usize, usize, usize),
    pub alphabet: Alphabet,
    pub flags: ChannelFlags,
    pub z_bytes: Vec<u8>,
    pub y_bytes: Vec<u8>,
}

fn put_u32(out: &mut Vec<u8>, v: usize, field: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Argument(format!("{field} = {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "container truncated reading {field}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn i32(&mut self, field: &str) -> Result<i32> {
        let b = self.take(4, field)?;
        Ok(i32::from_le_bytes(b.try_into().unwrap()))
    }
}

impl BitstreamContainer {
    /// Total serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        CONTAINER_MAGIC.len() + 6 * 4 + 2 * 4 + self.flags.to_bytes().len() + 4 + self.z_bytes.len() + 4 + self.y_bytes.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.flags.len() != self.y_dims.2 {
            return Err(Error::Internal(format!(
                "{} channel flags for {} latent channels",
                self.flags.len(),
                self.y_dims.2
            )));
        }
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(CONTAINER_MAGIC);
        let (h_y, w_y, c_y) = self.y_dims;
        let (h_z, w_z, c_z) = self.z_dims;
        for (v, name) in [(h_y, "h_y"), (w_y, "w_y"), (c_y, "c_y"), (h_z, "h_z"), (w_z, "w_z"), (c_z, "c_z")] {
            put_u32(&mut out, v, name)?;
        }
        out.extend_from_slice(&self.alphabet.min.to_le_bytes());
        out.extend_from_slice(&self.alphabet.max.to_le_bytes());
        out.extend_from_slice(&self.flags.to_bytes());
        put_u32(&mut out, self.z_bytes.len(), "z_len")?;
        out.extend_from_slice(&self.z_bytes);
        put_u32(&mut out, self.y_bytes.len(), "y_len")?;
        out.extend_from_slice(&self.y_bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(CONTAINER_MAGIC.len(), "magic")?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::Parse(format!(
                "bad container magic: expected {:?}",
                std::str::from_utf8(CONTAINER_MAGIC).unwrap()
            )));
        }
        let mut dims = [0usize; 6];
        for (d, name) in dims.iter_mut().zip(["h_y", "w_y", "c_y", "h_z", "w_z", "c_z"]) {
            *d = r.u32(name)?;
            if *d == 0 {
                return Err(Error::Parse(format!("container field {name} is zero")));
            }
        }
        let q_min = r.i32("q_min")?;
        let q_max = r.i32("q_max")?;
        let alphabet =
            Alphabet::new(q_min, q_max).map_err(|e| Error::Parse(format!("container alphabet: {e}")))?;
        let flags = ChannelFlags::from_bytes(r.take(ChannelFlags::byte_len(dims[2]), "flags")?, dims[2])?;
        let z_len = r.u32("z_len")?;
        let z_bytes = r.take(z_len, "z substream")?.to_vec();
        let y_len = r.u32("y_len")?;
        let y_bytes = r.take(y_len, "y substream")?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Parse(format!(
                "{} trailing bytes after the y substream",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            y_dims: (dims[0], dims[1], dims[2]),
            z_dims: (dims[3], dims[4], dims[5]),
            alphabet,
            flags,
            z_bytes,
            y_bytes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BitstreamContainer {
        BitstreamContainer {
            y_dims: (4, 5, 10),
            z_dims: (1, 2, 3),
            alphabet: Alphabet::new(-3, 4).unwrap(),
            flags: ChannelFlags::from_bits((0..10).map(|i| i % 3 == 0).collect()),
            z_bytes: vec![1, 2, 3],
            y_bytes: vec![9; 7],
        }
    }

    #[test]
    fn layout_is_byte_exact() {
        let b = sample().to_bytes().unwrap();
        let mut want = b"MSCAEC01".to_vec();
        for v in [4u32, 5, 10, 1, 2, 3] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&(-3i32).to_le_bytes());
        want.extend_from_slice(&4i32.to_le_bytes());
        want.extend_from_slice(&[0b0100_1001, 0b10]);
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(&[1, 2, 3]);
        want.extend_from_slice(&7u32.to_le_bytes());
        want.extend_from_slice(&[9; 7]);
        assert_eq!(b, want);
        assert_eq!(sample().byte_len(), want.len());
        assert_eq!(BitstreamContainer::from_bytes(&b).unwrap(), sample());
    }

    #[test]
    fn every_truncation_is_a_parse_error() {
        let b = sample().to_bytes().unwrap();
        for n in 0..b.len() {
            assert!(matches!(BitstreamContainer::from_bytes(&b[..n]), Err(Error::Parse(_))), "len {n}");
        }
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(BitstreamContainer::from_bytes(&long), Err(Error::Parse(_))));
    }

    #[test]
    fn bad_magic_names_expected() {
        let mut b = sample().to_bytes().unwrap();
        b[0] = b'X';
        match BitstreamContainer::from_bytes(&b) {
            Err(Error::Parse(m)) => assert!(m.contains("MSCAEC01"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn set_padding_flag_bit_rejected() {
        let mut b = sample().to_bytes().unwrap();
        b[40 + 1] |= 0x80;
        assert!(matches!(BitstreamContainer::from_bytes(&b), Err(Error::Parse(_))));
    }
}
