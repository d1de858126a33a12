//! Value serialization for distributed stages.
//!
//! The distributed backend moves every task input and output — and every
//! future payload and stream element — through byte buffers, even though all
//! workers live in one process. That forced roundtrip is the point: it keeps
//! the backend honest about what a real distributed deployment would
//! serialize, and it makes serialization costs visible to benchmarks.
//!
//! [`Codec`] is deliberately a small hand-rolled trait rather than a facade
//! over a serialization framework: tests instrument implementations (e.g.
//! counting invocations) to pin down exactly how many encode/decode calls a
//! dispatch performs, and the framing must be stable enough to state
//! byte-size guarantees (remote future handles encode in well under 64
//! bytes).
//!
//! Framing rules: integers are little-endian and fixed-width, lengths are
//! `u64` prefixes, sums are one tag byte followed by the payload. Decoding
//! is strict — trailing bytes are an error, as is running out of input.

use crate::either::Either;
use crate::error::CodecError;

/// A value that can cross a serialization boundary.
///
/// Implementations must roundtrip: `decode(encode(v)) == v` for every value.
/// `Send + 'static` because encoded values are produced on one thread and
/// decoded on another.
pub trait Codec: Sized + Send + 'static {
    /// Appends this value's encoding to `out`.
    fn encode(&self, out: &mut Vec<u8>);

    /// Reads one value from the front of `r`.
    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError>;
}

/// Encodes a value into a fresh buffer.
pub fn encode_to_vec<T: Codec>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    value.encode(&mut out);
    out
}

/// Decodes a value from a buffer, requiring the buffer to be consumed
/// exactly.
pub fn decode_from_slice<T: Codec>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut r = ByteReader::new(bytes);
    let value = T::decode(&mut r)?;
    if r.remaining() != 0 {
        return Err(CodecError {
            expected: "end of input",
            remaining: r.remaining(),
            detail: "trailing bytes after a complete value".to_string(),
        });
    }
    Ok(value)
}

/// A cursor over a byte buffer being decoded.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Starts reading at the front of `buf`.
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    /// Bytes not yet consumed.
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Consumes exactly `n` bytes, or reports how short the buffer is.
    pub fn take(&mut self, n: usize, expected: &'static str) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError {
                expected,
                remaining: self.remaining(),
                detail: format!("needed {n} bytes"),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, expected: &'static str) -> Result<u8, CodecError> {
        Ok(self.take(1, expected)?[0])
    }

    fn u64_le(&mut self, expected: &'static str) -> Result<u64, CodecError> {
        let bytes = self.take(8, expected)?;
        Ok(u64::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn len_prefix(&mut self, expected: &'static str) -> Result<usize, CodecError> {
        let n = self.u64_le(expected)?;
        usize::try_from(n).map_err(|_| CodecError {
            expected,
            remaining: self.remaining(),
            detail: format!("length {n} exceeds this platform's usize"),
        })
    }
}

impl Codec for () {
    fn encode(&self, _out: &mut Vec<u8>) {}

    fn decode(_r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        Ok(())
    }
}

impl Codec for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        match r.u8("bool")? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CodecError {
                expected: "bool",
                remaining: r.remaining(),
                detail: format!("invalid tag byte {b}"),
            }),
        }
    }
}

macro_rules! int_codec {
    ($($ty:ty => $name:literal),* $(,)?) => {
        $(
            impl Codec for $ty {
                fn encode(&self, out: &mut Vec<u8>) {
                    out.extend_from_slice(&self.to_le_bytes());
                }

                fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
                    let bytes = r.take(std::mem::size_of::<$ty>(), $name)?;
                    Ok(<$ty>::from_le_bytes(bytes.try_into().unwrap()))
                }
            }
        )*
    };
}

int_codec! {
    u8 => "u8",
    u16 => "u16",
    u32 => "u32",
    u64 => "u64",
    i8 => "i8",
    i16 => "i16",
    i32 => "i32",
    i64 => "i64",
}

impl Codec for usize {
    fn encode(&self, out: &mut Vec<u8>) {
        (*self as u64).encode(out);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let n = r.u64_le("usize")?;
        usize::try_from(n).map_err(|_| CodecError {
            expected: "usize",
            remaining: r.remaining(),
            detail: format!("value {n} exceeds this platform's usize"),
        })
    }
}

impl Codec for f64 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        Ok(f64::from_bits(r.u64_le("f64")?))
    }
}

impl Codec for String {
    fn encode(&self, out: &mut Vec<u8>) {
        self.len().encode(out);
        out.extend_from_slice(self.as_bytes());
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let len = r.len_prefix("String")?;
        let bytes = r.take(len, "String")?;
        String::from_utf8(bytes.to_vec()).map_err(|e| CodecError {
            expected: "String",
            remaining: r.remaining(),
            detail: format!("invalid UTF-8: {e}"),
        })
    }
}

impl<T: Codec> Codec for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        self.len().encode(out);
        for item in self {
            item.encode(out);
        }
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let len = r.len_prefix("Vec")?;
        let mut items = Vec::with_capacity(len.min(1024));
        for _ in 0..len {
            items.push(T::decode(r)?);
        }
        Ok(items)
    }
}

impl<T: Codec> Codec for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode(out);
            }
        }
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        match r.u8("Option")? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            b => Err(CodecError {
                expected: "Option",
                remaining: r.remaining(),
                detail: format!("invalid tag byte {b}"),
            }),
        }
    }
}

impl<A: Codec, B: Codec> Codec for (A, B) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?))
    }
}

impl<A: Codec, B: Codec, C: Codec> Codec for (A, B, C) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
        self.2.encode(out);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?, C::decode(r)?))
    }
}

impl<L: Codec, R: Codec> Codec for Either<L, R> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Either::Left(l) => {
                out.push(0);
                l.encode(out);
            }
            Either::Right(r) => {
                out.push(1);
                r.encode(out);
            }
        }
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        match r.u8("Either")? {
            0 => Ok(Either::Left(L::decode(r)?)),
            1 => Ok(Either::Right(R::decode(r)?)),
            b => Err(CodecError {
                expected: "Either",
                remaining: r.remaining(),
                detail: format!("invalid tag byte {b}"),
            }),
        }
    }
}
