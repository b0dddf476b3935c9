//! AMF0 values as used by RTMP command messages.

use super::RtmpError;

const NUMBER: u8 = 0x00;
const BOOLEAN: u8 = 0x01;
const STRING: u8 = 0x02;
const OBJECT: u8 = 0x03;
const NULL: u8 = 0x05;
const UNDEFINED: u8 = 0x06;
const ECMA_ARRAY: u8 = 0x08;
const OBJECT_END: u8 = 0x09;
const STRICT_ARRAY: u8 = 0x0A;
const DATE: u8 = 0x0B;
const LONG_STRING: u8 = 0x0C;

#[derive(Debug, Clone, PartialEq)]
pub enum Amf0Value {
    Number(f64),
    Boolean(bool),
    String(String),
    Object(Vec<(String, Amf0Value)>),
    Null,
    Undefined,
    EcmaArray(Vec<(String, Amf0Value)>),
    StrictArray(Vec<Amf0Value>),
    Date(f64),
}

impl Amf0Value {
    pub fn str(s: impl Into<String>) -> Self {
        Amf0Value::String(s.into())
    }

    pub fn object<K: Into<String>>(props: impl IntoIterator<Item = (K, Amf0Value)>) -> Self {
        Amf0Value::Object(props.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Amf0Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Amf0Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Property lookup on objects and ECMA arrays.
    pub fn get(&self, key: &str) -> Option<&Amf0Value> {
        match self {
            Amf0Value::Object(props) | Amf0Value::EcmaArray(props) => {
                props.iter().find(|(k, _)| k == key).map(|(_, v)| v)
            }
            _ => None,
        }
    }
}

pub fn encode(values: &[Amf0Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        encode_value(&mut out, v);
    }
    out
}

fn encode_key(out: &mut Vec<u8>, key: &str) {
    out.extend_from_slice(&(key.len() as u16).to_be_bytes());
    out.extend_from_slice(key.as_bytes());
}

fn encode_props(out: &mut Vec<u8>, props: &[(String, Amf0Value)]) {
    for (k, v) in props {
        encode_key(out, k);
        encode_value(out, v);
    }
    out.extend_from_slice(&[0, 0, OBJECT_END]);
}

fn encode_value(out: &mut Vec<u8>, v: &Amf0Value) {
    match v {
        Amf0Value::Number(n) => {
            out.push(NUMBER);
            out.extend_from_slice(&n.to_be_bytes());
        }
        Amf0Value::Boolean(b) => {
            out.push(BOOLEAN);
            out.push(*b as u8);
        }
        Amf0Value::String(s) if s.len() > u16::MAX as usize => {
            out.push(LONG_STRING);
            out.extend_from_slice(&(s.len() as u32).to_be_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Amf0Value::String(s) => {
            out.push(STRING);
            encode_key(out, s);
        }
        Amf0Value::Object(props) => {
            out.push(OBJECT);
            encode_props(out, props);
        }
        Amf0Value::Null => out.push(NULL),
        Amf0Value::Undefined => out.push(UNDEFINED),
        Amf0Value::EcmaArray(props) => {
            out.push(ECMA_ARRAY);
            out.extend_from_slice(&(props.len() as u32).to_be_bytes());
            encode_props(out, props);
        }
        Amf0Value::StrictArray(items) => {
            out.push(STRICT_ARRAY);
            out.extend_from_slice(&(items.len() as u32).to_be_bytes());
            for item in items {
                encode_value(out, item);
            }
        }
        Amf0Value::Date(ms) => {
            out.push(DATE);
            out.extend_from_slice(&ms.to_be_bytes());
            out.extend_from_slice(&[0, 0]);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RtmpError> {
        if self.buf.len() - self.pos < n {
            return Err(RtmpError::Amf("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, RtmpError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, RtmpError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, RtmpError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RtmpError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<String, RtmpError> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| RtmpError::Amf("invalid utf-8 string".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Amf0Value>, RtmpError> {
    let mut c = Cursor { buf, pos: 0 };
    let mut out = Vec::new();
    while c.pos < buf.len() {
        out.push(decode_value(&mut c, 0)?);
    }
    Ok(out)
}

fn decode_props(c: &mut Cursor<'_>, depth: usize) -> Result<Vec<(String, Amf0Value)>, RtmpError> {
    let mut props = Vec::new();
    loop {
        let len = c.u16()? as usize;
        if len == 0 {
            let marker = c.u8()?;
            if marker == OBJECT_END {
                return Ok(props);
            }
            return Err(RtmpError::Amf(format!("expected object end, got marker {marker:#04x}")));
        }
        let key = c.utf8(len)?;
        let value = decode_value(c, depth + 1)?;
        props.push((key, value));
    }
}

fn decode_value(c: &mut Cursor<'_>, depth: usize) -> Result<Amf0Value, RtmpError> {
    if depth > 32 {
        return Err(RtmpError::Amf("nesting too deep".into()));
    }
    let marker = c.u8()?;
    Ok(match marker {
        NUMBER => Amf0Value::Number(c.f64()?),
        BOOLEAN => Amf0Value::Boolean(c.u8()? != 0),
        STRING => {
            let len = c.u16()? as usize;
            Amf0Value::String(c.utf8(len)?)
        }
        LONG_STRING => {
            let len = c.u32()? as usize;
            Amf0Value::String(c.utf8(len)?)
        }
        OBJECT => Amf0Value::Object(decode_props(c, depth)?),
        NULL => Amf0Value::Null,
        UNDEFINED => Amf0Value::Undefined,
        ECMA_ARRAY => {
            let _count = c.u32()?;
            Amf0Value::EcmaArray(decode_props(c, depth)?)
        }
        STRICT_ARRAY => {
            let n = c.u32()? as usize;
            let mut items = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                items.push(decode_value(c, depth + 1)?);
            }
            Amf0Value::StrictArray(items)
        }
        DATE => {
            let ms = c.f64()?;
            let _tz = c.u16()?;
            Amf0Value::Date(ms)
        }
        other => return Err(RtmpError::Amf(format!("unsupported marker {other:#04x}"))),
    })
}
